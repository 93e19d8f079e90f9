//! Node and edge-message interventions, regimes, and structural-change diagnostics.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::error::{PoscmError, Result};
use crate::exogenous::sample_exogenous;
use crate::generate::phase_one;
use crate::messages::{Channel, MessageReplacement};
use crate::spec::PoscmSpec;
use crate::stats::{bonferroni, chi_square_homogeneity, fisher_exact, EmpiricalLaw};

#[derive(Debug, Clone)]
pub enum Intervention {
    /// `do(beta_j = b)`, applied at node j's Phase-I slot.
    BetaNode { node: usize, value: f64 },
    /// `do(V_j = v)`, Phase II only.
    VNode { node: usize, value: f64 },
    BetaEdge { source: usize, target: usize, replacement: MessageReplacement },
    VEdge { source: usize, target: usize, replacement: MessageReplacement },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Target {
    Node(usize, Channel),
    Dyad(usize, usize, Channel),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Node(j, c) => write!(f, "{c} of node {j}"),
            Target::Dyad(s, t, c) => write!(f, "{c} message {s}->{t}"),
        }
    }
}

impl Intervention {
    pub fn target(&self) -> Target {
        match self {
            Intervention::BetaNode { node, .. } => Target::Node(*node, Channel::Context),
            Intervention::VNode { node, .. } => Target::Node(*node, Channel::Value),
            Intervention::BetaEdge { source, target, .. } => Target::Dyad(*source, *target, Channel::Context),
            Intervention::VEdge { source, target, .. } => Target::Dyad(*source, *target, Channel::Value),
        }
    }

    pub fn is_value_level(&self) -> bool {
        matches!(self, Intervention::VNode { .. } | Intervention::VEdge { .. })
    }

    pub fn v_edge_clamp(source: usize, target: usize, m: Vec<f64>) -> Self {
        Intervention::VEdge { source, target, replacement: MessageReplacement::Clamp(m) }
    }

    pub fn describe(&self) -> String {
        match self {
            Intervention::BetaNode { node, value } => format!("do(beta_{node}={value})"),
            Intervention::VNode { node, value } => format!("do(V_{node}={value})"),
            Intervention::BetaEdge { source, target, replacement } => {
                format!("do(Hb_{target}<-{source}={})", replacement.describe())
            }
            Intervention::VEdge { source, target, replacement } => {
                format!("do(Hv_{target}<-{source}={})", replacement.describe())
            }
        }
    }
}

/// A set of interventions applied together, at most one per target.
#[derive(Debug, Clone, Default)]
pub struct Regime {
    pub label: String,
    interventions: Vec<Intervention>,
    beta_node: BTreeMap<usize, f64>,
    v_node: BTreeMap<usize, f64>,
    beta_edge: BTreeMap<(usize, usize), MessageReplacement>,
    v_edge: BTreeMap<(usize, usize), MessageReplacement>,
}

impl Regime {
    pub fn observational() -> Self {
        Self { label: "obs".into(), ..Self::default() }
    }

    pub fn new(label: impl Into<String>, interventions: Vec<Intervention>) -> Result<Self> {
        let mut r = Self { label: label.into(), ..Self::default() };
        for iv in interventions {
            r.push(iv)?;
        }
        Ok(r)
    }

    /// Joint `do(V_j = v)` over the listed nodes.
    pub fn do_values(label: impl Into<String>, assignment: &[(usize, f64)]) -> Result<Self> {
        Self::new(
            label,
            assignment.iter().map(|(node, value)| Intervention::VNode { node: *node, value: *value }).collect(),
        )
    }

    pub fn do_contexts(label: impl Into<String>, assignment: &[(usize, f64)]) -> Result<Self> {
        Self::new(
            label,
            assignment.iter().map(|(node, value)| Intervention::BetaNode { node: *node, value: *value }).collect(),
        )
    }

    pub fn push(&mut self, iv: Intervention) -> Result<()> {
        let clash = match &iv {
            Intervention::BetaNode { node, value } => self.beta_node.insert(*node, *value).is_some(),
            Intervention::VNode { node, value } => self.v_node.insert(*node, *value).is_some(),
            Intervention::BetaEdge { source, target, replacement } => {
                self.beta_edge.insert((*source, *target), replacement.clone()).is_some()
            }
            Intervention::VEdge { source, target, replacement } => {
                self.v_edge.insert((*source, *target), replacement.clone()).is_some()
            }
        };
        if clash {
            return Err(PoscmError::ConflictingInterventions(iv.target().to_string()));
        }
        self.interventions.push(iv);
        Ok(())
    }

    /// Copy of `self` with the interventions of `other` added.
    pub fn combined(&self, other: &Regime, label: impl Into<String>) -> Result<Self> {
        let mut r = self.clone();
        r.label = label.into();
        for iv in &other.interventions {
            r.push(iv.clone())?;
        }
        Ok(r)
    }

    pub fn interventions(&self) -> &[Intervention] {
        &self.interventions
    }

    pub fn is_empty(&self) -> bool {
        self.interventions.is_empty()
    }

    pub fn is_value_level(&self) -> bool {
        self.interventions.iter().all(Intervention::is_value_level)
    }

    pub fn beta_override(&self, node: usize) -> Option<f64> {
        self.beta_node.get(&node).copied()
    }

    pub fn value_override(&self, node: usize) -> Option<f64> {
        self.v_node.get(&node).copied()
    }

    pub fn beta_edge(&self, source: usize, target: usize) -> Option<&MessageReplacement> {
        self.beta_edge.get(&(source, target))
    }

    pub fn v_edge(&self, source: usize, target: usize) -> Option<&MessageReplacement> {
        self.v_edge.get(&(source, target))
    }

    pub fn has_v_edges_into(&self, target: usize) -> bool {
        self.v_edge.keys().any(|(_, t)| *t == target)
    }

    pub fn has_beta_edges_into(&self, target: usize) -> bool {
        self.beta_edge.keys().any(|(_, t)| *t == target)
    }

    pub fn validate(&self, spec: &PoscmSpec) -> Result<()> {
        for iv in &self.interventions {
            match iv {
                Intervention::BetaNode { node, value } => {
                    spec.check_node(*node)?;
                    if !spec.context_domain[*node].contains(*value) {
                        return Err(PoscmError::DomainViolation { node: *node, channel: "context", value: *value });
                    }
                }
                Intervention::VNode { node, value } => {
                    spec.check_node(*node)?;
                    if !spec.value_domain[*node].contains(*value) {
                        return Err(PoscmError::DomainViolation { node: *node, channel: "value", value: *value });
                    }
                }
                Intervention::BetaEdge { source, target, .. } | Intervention::VEdge { source, target, .. } => {
                    spec.check_dyad(*source, *target)?;
                    let channel = match iv.target() {
                        Target::Dyad(_, _, c) => c,
                        Target::Node(..) => unreachable!(),
                    };
                    if !spec.is_message_augmented(*target, channel) {
                        return Err(PoscmError::NotMessageAugmented(iv.target().to_string()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Empirical law of the out-row `A_{j, >j}` of one source.
#[derive(Debug, Clone)]
pub struct SupervisingMeasure {
    pub source: usize,
    /// Downstream nodes, in generation order.
    pub targets: Vec<usize>,
    /// Row patterns encoded as bit `k` = edge to `targets[k]`.
    pub law: EmpiricalLaw,
    pub rows: usize,
    pub edge_counts: Vec<usize>,
}

impl SupervisingMeasure {
    pub fn from_rows(source: usize, targets: Vec<usize>, rows: &[Vec<bool>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(PoscmError::InsufficientSamples("supervising measure needs at least one row".into()));
        }
        let k = targets.len();
        let mut edge_counts = vec![0; k];
        let codes = rows.iter().map(|row| {
            let mut code = 0i64;
            for (t, bit) in row.iter().enumerate() {
                if *bit {
                    edge_counts[t] += 1;
                    if t < 62 {
                        code |= 1 << t;
                    }
                }
            }
            code
        });
        let law = EmpiricalLaw::labels(codes.collect::<Vec<_>>())?;
        Ok(Self { source, targets, law, rows: rows.len(), edge_counts })
    }

    pub fn marginal(&self, k: usize) -> f64 {
        self.edge_counts[k] as f64 / self.rows as f64
    }
}

/// Samples `n` worlds under `regime` and records the out-row of `j`.
pub fn supervising_measure(spec: &PoscmSpec, regime: &Regime, j: usize, n: usize, seed: u64) -> Result<SupervisingMeasure> {
    spec.check_node(j)?;
    regime.validate(spec)?;
    if n == 0 {
        return Err(PoscmError::InsufficientSamples("n must be at least 1".into()));
    }
    let targets: Vec<usize> = spec.order()[spec.rank(j) + 1..].to_vec();
    let rows: Vec<Vec<bool>> = (0..n as u64)
        .into_par_iter()
        .map(|r| {
            let draw = sample_exogenous(spec, seed, r);
            let p1 = phase_one(spec, &draw, regime)?;
            Ok(targets.iter().map(|t| p1.adjacency.get(j, *t)).collect())
        })
        .collect::<Result<_>>()?;
    SupervisingMeasure::from_rows(j, targets, &rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IiscResult {
    pub changed: bool,
    /// Largest per-dyad difference in edge frequency.
    pub statistic: f64,
    /// Smallest Bonferroni-corrected p-value in the family.
    pub p_value: f64,
    pub per_dyad: Vec<f64>,
    pub joint: Option<f64>,
}

/// Patterns up to this many support atoms also get a joint chi-square test.
const JOINT_SUPPORT_LIMIT: usize = 64;

/// Two-sample test for a change of supervising measure: per-dyad exact tests
/// plus, for small supports, a chi-square test over row patterns; Bonferroni
/// over the family.
pub fn iisc_detect(base: &SupervisingMeasure, int: &SupervisingMeasure, alpha: f64) -> Result<IiscResult> {
    if base.targets != int.targets {
        return Err(PoscmError::InvalidParameter("supervising measures over different dyads".into()));
    }
    if base.rows < 30 || int.rows < 30 {
        return Err(PoscmError::InsufficientSamples(format!(
            "{} and {} rows; at least 30 per arm",
            base.rows, int.rows
        )));
    }
    let mut raw = Vec::with_capacity(base.targets.len() + 1);
    let mut statistic: f64 = 0.0;
    for k in 0..base.targets.len() {
        let (a, b) = (base.edge_counts[k], int.edge_counts[k]);
        raw.push(fisher_exact(a, base.rows - a, b, int.rows - b));
        statistic = statistic.max((base.marginal(k) - int.marginal(k)).abs());
    }
    let (EmpiricalLaw::Labels { counts: cb, .. }, EmpiricalLaw::Labels { counts: ci, .. }) = (&base.law, &int.law) else {
        unreachable!("supervising measures hold label laws")
    };
    let mut support: Vec<i64> = cb.keys().chain(ci.keys()).copied().collect();
    support.sort_unstable();
    support.dedup();
    let joint = (support.len() > 1 && support.len() <= JOINT_SUPPORT_LIMIT && base.targets.len() > 1).then(|| {
        let row = |c: &BTreeMap<i64, usize>| support.iter().map(|s| *c.get(s).unwrap_or(&0)).collect::<Vec<_>>();
        chi_square_homogeneity(&[row(cb), row(ci)]).1
    });
    raw.extend(joint);
    let corrected = bonferroni(&raw);
    let p_value = corrected.iter().copied().fold(1.0, f64::min);
    let dyads = base.targets.len();
    Ok(IiscResult {
        changed: p_value < alpha,
        statistic,
        p_value,
        per_dyad: corrected[..dyads].to_vec(),
        joint: joint.map(|_| corrected[dyads]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::spec::{ContextMechanism, MechanismOperator, StructureKernel};

    fn spec(p_low: f64, p_high: f64) -> PoscmSpec {
        let mut b = PoscmSpec::builder(3)
            .all_context_domains(Domain::binary())
            .alpha(StructureKernel::product(move |_, _, b| if b == 1.0 { p_high } else { p_low }))
            .context(0, ContextMechanism::constant(0.0));
        for i in 0..3 {
            b = b.mechanism(i, MechanismOperator::fixed_direct(|_, u| f64::from(u[0] < 0.5)));
        }
        b.build().unwrap()
    }

    #[test]
    fn conflicting_targets_are_rejected() {
        let err = Regime::do_values("x", &[(0, 1.0), (0, 0.0)]).unwrap_err();
        assert!(matches!(err, PoscmError::ConflictingInterventions(_)));
        let ok = Regime::new(
            "mixed",
            vec![Intervention::VNode { node: 0, value: 1.0 }, Intervention::BetaNode { node: 0, value: 1.0 }],
        )
        .unwrap();
        assert!(!ok.is_value_level());
        let dup = Regime::new("e", vec![Intervention::v_edge_clamp(0, 1, vec![1.0]), Intervention::v_edge_clamp(0, 1, vec![2.0])]);
        assert!(dup.is_err());
    }

    #[test]
    fn validation_checks_nodes_domains_and_message_form() {
        let s = spec(0.5, 0.5);
        assert!(Regime::do_values("x", &[(5, 1.0)]).unwrap().validate(&s).is_err());
        assert!(Regime::do_values("x", &[(0, 0.5)]).unwrap().validate(&s).is_err());
        assert!(Regime::do_contexts("x", &[(0, 2.0)]).unwrap().validate(&s).is_err());
        let e = Regime::new("e", vec![Intervention::v_edge_clamp(0, 1, vec![1.0])]).unwrap();
        assert!(matches!(e.validate(&s), Err(PoscmError::NotMessageAugmented(_))));
        let back = Regime::new("e", vec![Intervention::v_edge_clamp(1, 0, vec![1.0])]).unwrap();
        assert!(matches!(back.validate(&s), Err(PoscmError::InvalidDyad { .. })));
    }

    #[test]
    fn supervising_marginals_track_edge_probability() {
        let s = spec(0.5, 0.9);
        let mu = supervising_measure(&s, &Regime::observational(), 0, 10_000, 1).unwrap();
        assert_eq!(mu.targets, vec![1, 2]);
        for k in 0..2 {
            assert!((mu.marginal(k) - 0.5).abs() < 0.02);
        }
        let hi = supervising_measure(&s, &Regime::do_contexts("b", &[(0, 1.0)]).unwrap(), 0, 10_000, 2).unwrap();
        for k in 0..2 {
            assert!((hi.marginal(k) - 0.9).abs() < 0.02);
        }
        assert!(iisc_detect(&mu, &hi, 0.01).unwrap().changed);
    }

    #[test]
    fn value_regimes_leave_the_measure_unchanged() {
        let s = spec(0.3, 0.9);
        let base = supervising_measure(&s, &Regime::observational(), 0, 2000, 9).unwrap();
        let v = supervising_measure(&s, &Regime::do_values("v", &[(1, 1.0)]).unwrap(), 0, 2000, 9).unwrap();
        assert_eq!(base.edge_counts, v.edge_counts);
        assert_eq!(base.law, v.law);
        assert!(!iisc_detect(&base, &v, 0.01).unwrap().changed);
    }

    #[test]
    fn iisc_controls_size() {
        let s = spec(0.5, 0.5);
        let obs = Regime::observational();
        let rejections = (0..100)
            .filter(|t| {
                let a = supervising_measure(&s, &obs, 0, 500, 1000 + t).unwrap();
                let b = supervising_measure(&s, &obs, 0, 500, 5000 + t).unwrap();
                iisc_detect(&a, &b, 0.01).unwrap().changed
            })
            .count();
        assert!(rejections <= 5, "{rejections}");
        let small = supervising_measure(&s, &obs, 0, 10, 1).unwrap();
        assert!(matches!(iisc_detect(&small, &small, 0.01), Err(PoscmError::InsufficientSamples(_))));
    }
}
