use serde::{Deserialize, Serialize};

use crate::error::{PoscmError, Result};

/// Context or value space of one node.
///
/// Finite domains carry their values as label indices (`0.0, 1.0, ...`), so
/// every node quantity in a world is an `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Finite(Vec<String>),
    Interval { lo: f64, hi: f64 },
}

/// Result of fitting a simulated quantity into its declared domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fitted {
    Inside(f64),
    Clamped { from: f64, to: f64 },
}

impl Domain {
    pub fn finite<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let d = Domain::Finite(labels.into_iter().map(Into::into).collect());
        d.validate()?;
        Ok(d)
    }

    pub fn binary() -> Self {
        Domain::Finite(vec!["0".into(), "1".into()])
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        let d = Domain::Interval { lo, hi };
        d.validate()?;
        Ok(d)
    }

    /// Single-label domain for degenerate contexts.
    pub fn degenerate() -> Self {
        Domain::Finite(vec!["none".into()])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Finite(labels) => {
                if labels.is_empty() {
                    return Err(PoscmError::InvalidDomain("empty label list".into()));
                }
                let mut seen = std::collections::BTreeSet::new();
                for l in labels {
                    if !seen.insert(l.as_str()) {
                        return Err(PoscmError::InvalidDomain(format!("duplicate label {l:?}")));
                    }
                }
                Ok(())
            }
            Domain::Interval { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(PoscmError::InvalidDomain(format!("interval [{lo}, {hi}]")));
                }
                Ok(())
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Domain::Finite(_))
    }

    pub fn cardinality(&self) -> Option<usize> {
        match self {
            Domain::Finite(l) => Some(l.len()),
            Domain::Interval { .. } => None,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match self {
            Domain::Finite(l) => x.fract() == 0.0 && x >= 0.0 && (x as usize) < l.len(),
            Domain::Interval { lo, hi } => x >= *lo && x <= *hi,
        }
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        match self {
            Domain::Finite(l) => l.iter().position(|s| s == label),
            Domain::Interval { .. } => None,
        }
    }

    pub fn label(&self, x: f64) -> Option<&str> {
        match self {
            Domain::Finite(l) if self.contains(x) => Some(&l[x as usize]),
            _ => None,
        }
    }

    /// Clamps interval values into range; finite values must already be valid labels.
    pub fn fit(&self, x: f64) -> Option<Fitted> {
        if !x.is_finite() {
            return None;
        }
        match self {
            Domain::Finite(_) => self.contains(x).then_some(Fitted::Inside(x)),
            Domain::Interval { lo, hi } => {
                if x < *lo {
                    Some(Fitted::Clamped { from: x, to: *lo })
                } else if x > *hi {
                    Some(Fitted::Clamped { from: x, to: *hi })
                } else {
                    Some(Fitted::Inside(x))
                }
            }
        }
    }

    /// Maps a uniform draw onto the domain (inverse-CDF of the uniform law on it).
    pub fn from_uniform(&self, u: f64) -> f64 {
        match self {
            Domain::Finite(l) => ((u * l.len() as f64) as usize).min(l.len() - 1) as f64,
            Domain::Interval { lo, hi } => lo + (hi - lo) * u,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_domains() {
        assert!(Domain::finite(Vec::<String>::new()).is_err());
        assert!(Domain::finite(["a", "a"]).is_err());
        assert!(Domain::interval(1.0, 1.0).is_err());
        assert!(Domain::interval(0.0, f64::INFINITY).is_err());
        assert!(Domain::finite(["on", "off"]).is_ok());
    }

    #[test]
    fn fit_clamps_intervals_only() {
        let d = Domain::interval(-1.0, 1.0).unwrap();
        assert_eq!(d.fit(2.0), Some(Fitted::Clamped { from: 2.0, to: 1.0 }));
        assert_eq!(d.fit(0.5), Some(Fitted::Inside(0.5)));
        assert_eq!(d.fit(f64::NAN), None);
        let f = Domain::binary();
        assert_eq!(f.fit(1.0), Some(Fitted::Inside(1.0)));
        assert_eq!(f.fit(2.0), None);
        assert_eq!(f.fit(0.5), None);
    }

    #[test]
    fn labels_round_trip() {
        let d = Domain::finite(["rod", "cone"]).unwrap();
        assert_eq!(d.label_index("cone"), Some(1));
        assert_eq!(d.label(1.0), Some("cone"));
        assert_eq!(d.from_uniform(0.99), 1.0);
    }
}
