//! Internal reparameterizations of the message space.
//!
//! A gauge `g` acts on every message of one node: `H' = g o H` and the
//! aggregator undoes it slotwise, `F' = F o g^-1`. Zero slots stay zero, so
//! gating is preserved; the transform is rejected when `g` sends a reachable
//! message to zero or fails to round-trip.

use std::fmt;
use std::sync::Arc;

use super::{MessageMatrix, MessageMechanism};
use crate::error::{PoscmError, Result};

pub type VectorMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum Gauge {
    Identity,
    /// Coordinatewise `m -> scale * m + shift`.
    Affine { scale: f64, shift: f64 },
    Custom { name: String, forward: VectorMap, inverse: VectorMap },
}

impl fmt::Debug for Gauge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gauge::Identity => f.write_str("Identity"),
            Gauge::Affine { scale, shift } => write!(f, "Affine({scale}, {shift})"),
            Gauge::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl Gauge {
    pub fn custom(
        name: impl Into<String>,
        forward: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        inverse: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Gauge::Custom { name: name.into(), forward: Arc::new(forward), inverse: Arc::new(inverse) }
    }

    pub fn forward(&self, m: &[f64]) -> Vec<f64> {
        match self {
            Gauge::Identity => m.to_vec(),
            Gauge::Affine { scale, shift } => m.iter().map(|x| scale * x + shift).collect(),
            Gauge::Custom { forward, .. } => forward(m),
        }
    }

    pub fn inverse(&self, m: &[f64]) -> Vec<f64> {
        match self {
            Gauge::Identity => m.to_vec(),
            Gauge::Affine { scale, shift } => m.iter().map(|x| (x - shift) / scale).collect(),
            Gauge::Custom { inverse, .. } => inverse(m),
        }
    }

    /// Checks the gauge on messages from the reachable set.
    pub fn validate_on(&self, reachable: &[Vec<f64>]) -> Result<()> {
        if let Gauge::Affine { scale, .. } = self {
            if *scale == 0.0 || !scale.is_finite() {
                return Err(PoscmError::NonInvertible(format!("affine scale {scale}")));
            }
        }
        for m in reachable {
            let g = self.forward(m);
            if g.len() != m.len() {
                return Err(PoscmError::MessageDimension { expected: m.len(), got: g.len() });
            }
            if g.iter().all(|x| *x == 0.0) {
                return Err(PoscmError::NonInvertible(format!(
                    "{self:?} maps reachable message {m:?} to the zero message"
                )));
            }
            let back = self.inverse(&g);
            let err = back.iter().zip(m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if back.len() != m.len() || err > 1e-9 * (1.0 + m.iter().map(|x| x.abs()).fold(0.0, f64::max)) {
                return Err(PoscmError::NonInvertible(format!(
                    "{self:?} does not round-trip {m:?} (error {err:e})"
                )));
            }
        }
        Ok(())
    }
}

/// Gauge-transforms a message mechanism. `reachable` lists `(source, input)`
/// pairs at which the gauge is validated.
pub fn gauge_transform(
    mech: &MessageMechanism,
    gauge: &Gauge,
    reachable: &[(usize, f64)],
) -> Result<MessageMechanism> {
    let messages: Vec<Vec<f64>> = reachable.iter().map(|(s, x)| (mech.h)(*s, *x)).collect();
    gauge.validate_on(&messages)?;
    if matches!(gauge, Gauge::Identity) {
        return Ok(mech.clone());
    }
    let h = Arc::clone(&mech.h);
    let agg = Arc::clone(&mech.aggregate);
    let fwd = gauge.clone();
    let inv = gauge.clone();
    Ok(MessageMechanism::new(
        mech.dim,
        move |src, x| fwd.forward(&h(src, x)),
        move |mm, u| {
            let mut back = MessageMatrix::new(mm.dim, mm.sources.clone());
            for (slot, m) in back.slots.iter_mut().zip(&mm.slots) {
                if m.iter().any(|x| *x != 0.0) {
                    *slot = inv.inverse(m);
                }
            }
            agg(&back, u)
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mech() -> MessageMechanism {
        MessageMechanism::new(2, |_, v| vec![1.0, v], |mm, u| {
            let s = mm.sum();
            s[1] + 0.1 * s[0] + u[0]
        })
    }

    #[test]
    fn identity_gauge_is_a_no_op() {
        let m = mech();
        let g = gauge_transform(&m, &Gauge::Identity, &[(0, 0.3)]).unwrap();
        let a = m.evaluate(&[0, 1], &[Some(0.3), None], |_| None, &[0.2]).unwrap();
        let b = g.evaluate(&[0, 1], &[Some(0.3), None], |_| None, &[0.2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn affine_gauge_changes_messages_but_not_values() {
        let m = mech();
        let reach: Vec<(usize, f64)> = (0..11).map(|k| (0, k as f64 / 10.0)).collect();
        let g = gauge_transform(&m, &Gauge::Affine { scale: 2.0, shift: 1.0 }, &reach).unwrap();
        assert_eq!((g.h)(0, 0.5), vec![3.0, 2.0]);
        for (present, v) in [(true, 0.5), (false, 0.5), (true, 0.0)] {
            let inputs = [present.then_some(v), Some(0.25)];
            let a = m.evaluate(&[0, 1], &inputs, |_| None, &[0.4]).unwrap();
            let b = g.evaluate(&[0, 1], &inputs, |_| None, &[0.4]).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gauge_hitting_zero_is_rejected() {
        let m = MessageMechanism::new(1, |_, v| vec![v], |mm, _| mm.sum()[0]);
        let err = gauge_transform(&m, &Gauge::Affine { scale: 2.0, shift: 1.0 }, &[(0, -0.5)]).unwrap_err();
        assert!(matches!(err, PoscmError::NonInvertible(_)));
        let collapse = Gauge::custom("square", |m| m.iter().map(|x| x * x).collect(), |m| m.to_vec());
        assert!(gauge_transform(&m, &collapse, &[(0, 3.0)]).is_err());
        assert!(gauge_transform(&m, &Gauge::Affine { scale: 0.0, shift: 1.0 }, &[]).is_err());
    }
}
