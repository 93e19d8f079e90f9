//! Two-phase ordered generation.
//!
//! Phase I walks the generation order once: each node's context is formed from
//! the contexts of its realized parents, then its out-row of edges is drawn
//! from the structure kernel at that context. Phase II assigns mechanisms from
//! `(beta_i, Pa(i), U^f_i)` and evaluates values in the same order.

use std::sync::Arc;

use serde::Serialize;

use crate::domain::{Domain, Fitted};
use crate::error::{PoscmError, Result};
use crate::exogenous::{sample_exogenous, ExogenousDraw, Noise};
use crate::interventions::Regime;
use crate::messages::Channel;
use crate::rng::{mix64, tag};
use crate::spec::{ContextMechanism, Mechanism, MechanismHandle, PoscmSpec};

/// Dense edge indicators; only potential dyads can be set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self { n, bits: vec![false; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, j: usize, i: usize) -> bool {
        self.bits[j * self.n + i]
    }

    pub(crate) fn set(&mut self, j: usize, i: usize, on: bool) {
        self.bits[j * self.n + i] = on;
    }

    /// Realized parents of `i`, in generation order.
    pub fn parents(&self, spec: &PoscmSpec, i: usize) -> Vec<usize> {
        spec.potential_parents(i).iter().copied().filter(|j| self.get(*j, i)).collect()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.n {
            for i in 0..self.n {
                if self.get(j, i) {
                    out.push((j, i));
                }
            }
        }
        out
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }
}

/// A simulated quantity moved into its declared interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClampWarning {
    pub node: usize,
    pub channel: Channel,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOne {
    pub adjacency: Adjacency,
    pub beta: Vec<f64>,
    pub warnings: Vec<ClampWarning>,
}

#[derive(Debug, Clone)]
pub struct World {
    /// Key used for measurement noise; the replicate index for sampled worlds.
    pub id: u64,
    pub adjacency: Adjacency,
    pub beta: Vec<f64>,
    pub mech: Vec<MechanismHandle>,
    pub value: Vec<f64>,
    pub warnings: Vec<ClampWarning>,
    pub draw: Arc<ExogenousDraw>,
    pub regime: Arc<Regime>,
}

/// Serializable snapshot of a world (mechanisms are reported by kind only).
#[derive(Debug, Clone, Serialize)]
pub struct WorldRecord {
    pub id: u64,
    pub regime: String,
    pub edges: Vec<(usize, usize)>,
    pub beta: Vec<f64>,
    pub value: Vec<f64>,
    pub warnings: Vec<ClampWarning>,
}

impl World {
    pub fn record(&self) -> WorldRecord {
        WorldRecord {
            id: self.id,
            regime: self.regime.label.clone(),
            edges: self.adjacency.edges(),
            beta: self.beta.clone(),
            value: self.value.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

fn fit(domain: &Domain, node: usize, channel: Channel, x: f64, warnings: &mut Vec<ClampWarning>) -> Result<f64> {
    match domain.fit(x) {
        Some(Fitted::Inside(v)) => Ok(v),
        Some(Fitted::Clamped { from, to }) => {
            warnings.push(ClampWarning { node, channel, from, to });
            Ok(to)
        }
        None => Err(PoscmError::DomainViolation {
            node,
            channel: match channel {
                Channel::Context => "context",
                Channel::Value => "value",
            },
            value: x,
        }),
    }
}

/// Phase I without validating the regime.
pub(crate) fn phase_one(spec: &PoscmSpec, draw: &ExogenousDraw, regime: &Regime) -> Result<PhaseOne> {
    let n = spec.n();
    let order = spec.order();
    let mut adjacency = Adjacency::empty(n);
    let mut beta = vec![f64::NAN; n];
    let mut warnings = Vec::new();
    let mut inputs: Vec<Option<f64>> = Vec::with_capacity(n);
    for (r, &i) in order.iter().enumerate() {
        let b = match regime.beta_override(i) {
            Some(b) => b,
            None => {
                let potential = &order[..r];
                let raw = match &spec.phi[i] {
                    ContextMechanism::Direct(f) => {
                        if regime.has_beta_edges_into(i) {
                            return Err(PoscmError::NotMessageAugmented(format!("context of node {i}")));
                        }
                        let parents: Vec<(usize, f64)> = potential
                            .iter()
                            .filter(|j| adjacency.get(**j, i))
                            .map(|j| (*j, beta[*j]))
                            .collect();
                        f(&parents, draw.u_beta(i))
                    }
                    ContextMechanism::Messages(m) => {
                        inputs.clear();
                        inputs.extend(potential.iter().map(|j| adjacency.get(*j, i).then_some(beta[*j])));
                        m.evaluate(potential, &inputs, |s| regime.beta_edge(s, i), draw.u_beta(i))
                            .map_err(|e| mechanism_error(i, e))?
                    }
                };
                fit(&spec.context_domain[i], i, Channel::Context, raw, &mut warnings)?
            }
        };
        beta[i] = b;
        let targets = &order[r + 1..];
        match &spec.alpha.row_sampler {
            Some(sampler) => {
                let u: Vec<f64> = targets.iter().map(|t| draw.u_a(i, *t)).collect();
                let row = sampler(i, b, targets, &u);
                if row.len() != targets.len() {
                    return Err(PoscmError::InvalidSpec(format!(
                        "row sampler returned {} indicators for {} targets",
                        row.len(),
                        targets.len()
                    )));
                }
                for (t, on) in targets.iter().zip(row) {
                    adjacency.set(i, *t, on);
                }
            }
            None => {
                for &t in targets {
                    let p = (spec.alpha.edge_prob)(i, t, b);
                    if !(0.0..=1.0).contains(&p) {
                        return Err(PoscmError::InvalidSpec(format!("edge probability {p} for {i}->{t}")));
                    }
                    adjacency.set(i, t, draw.u_a(i, t) < p);
                }
            }
        }
    }
    Ok(PhaseOne { adjacency, beta, warnings })
}

fn mechanism_error(node: usize, e: PoscmError) -> PoscmError {
    match e {
        PoscmError::MessageDimension { .. } => e,
        other => PoscmError::Mechanism { node, reason: other.to_string() },
    }
}

pub(crate) fn assign_mechanisms(spec: &PoscmSpec, p1: &PhaseOne, draw: &ExogenousDraw) -> Result<Vec<MechanismHandle>> {
    (0..spec.n())
        .map(|i| {
            let parents = p1.adjacency.parents(spec, i);
            let beta = p1.beta[i];
            let u_f = draw.u_f(i);
            let mechanism = spec.gamma[i].assign(beta, &parents, u_f).map_err(|e| mechanism_error(i, e))?;
            Ok(MechanismHandle { beta, parents, u_f: u_f.to_vec(), mechanism })
        })
        .collect()
}

/// Phase-II value evaluation with mechanisms already assigned.
pub(crate) fn evaluate_values(
    spec: &PoscmSpec,
    adjacency: &Adjacency,
    mech: &[MechanismHandle],
    u_v: &Noise,
    regime: &Regime,
    warnings: &mut Vec<ClampWarning>,
) -> Result<Vec<f64>> {
    let order = spec.order();
    let mut value = vec![f64::NAN; spec.n()];
    let mut inputs: Vec<Option<f64>> = Vec::with_capacity(spec.n());
    for (r, &i) in order.iter().enumerate() {
        let handle = &mech[i];
        let edge_iv = regime.has_v_edges_into(i);
        if edge_iv && !handle.mechanism.is_message_form() {
            return Err(PoscmError::NotMessageAugmented(format!("value of node {i}")));
        }
        if let Some(v) = regime.value_override(i) {
            value[i] = v;
            continue;
        }
        let raw = match &handle.mechanism {
            Mechanism::Direct(f) => {
                let pv: Vec<(usize, f64)> = handle.parents.iter().map(|j| (*j, value[*j])).collect();
                f(&pv, u_v.get(i))
            }
            Mechanism::Messages(m) => {
                let potential = &order[..r];
                inputs.clear();
                inputs.extend(potential.iter().map(|j| adjacency.get(*j, i).then_some(value[*j])));
                m.evaluate(potential, &inputs, |s| regime.v_edge(s, i), u_v.get(i))
                    .map_err(|e| mechanism_error(i, e))?
            }
        };
        value[i] = fit(&spec.value_domain[i], i, Channel::Value, raw, warnings)?;
    }
    Ok(value)
}

/// Runs both phases on one exogenous draw.
pub fn generate(spec: &PoscmSpec, draw: &Arc<ExogenousDraw>, regime: &Arc<Regime>) -> Result<World> {
    check_draw(spec, draw)?;
    regime.validate(spec)?;
    generate_unchecked(spec, draw, regime)
}

fn check_draw(spec: &PoscmSpec, draw: &ExogenousDraw) -> Result<()> {
    if draw.n() != spec.n() {
        return Err(PoscmError::InvalidParameter(format!(
            "draw for {} nodes used with a {}-node model",
            draw.n(),
            spec.n()
        )));
    }
    Ok(())
}

pub(crate) fn generate_unchecked(spec: &PoscmSpec, draw: &Arc<ExogenousDraw>, regime: &Arc<Regime>) -> Result<World> {
    let p1 = phase_one(spec, draw, regime)?;
    let mech = assign_mechanisms(spec, &p1, draw)?;
    let PhaseOne { adjacency, beta, mut warnings } = p1;
    let value = evaluate_values(spec, &adjacency, &mech, draw.value_noise(), regime, &mut warnings)?;
    Ok(World {
        id: draw.replicate,
        adjacency,
        beta,
        mech,
        value,
        warnings,
        draw: Arc::clone(draw),
        regime: Arc::clone(regime),
    })
}

/// A frozen Phase-I outcome `(A*, beta*, f*)` that can be probed repeatedly
/// in Phase II with fresh value noise.
#[derive(Debug, Clone)]
pub struct InstanceHandle {
    pub spec: PoscmSpec,
    pub draw: Arc<ExogenousDraw>,
    pub adjacency: Adjacency,
    pub beta: Vec<f64>,
    pub mech: Vec<MechanismHandle>,
    pub warnings: Vec<ClampWarning>,
}

pub fn freeze_instance(spec: &PoscmSpec, seed: u64) -> Result<InstanceHandle> {
    InstanceHandle::from_draw(spec, Arc::new(sample_exogenous(spec, seed, 0)))
}

impl InstanceHandle {
    pub fn from_draw(spec: &PoscmSpec, draw: Arc<ExogenousDraw>) -> Result<Self> {
        Self::under(spec, draw, &Regime::observational())
    }

    /// Freezes the Phase-I outcome of `draw` under the context-level part of
    /// `regime` (value-level entries have no Phase-I effect).
    pub fn under(spec: &PoscmSpec, draw: Arc<ExogenousDraw>, regime: &Regime) -> Result<Self> {
        check_draw(spec, &draw)?;
        regime.validate(spec)?;
        let p1 = phase_one(spec, &draw, regime)?;
        let mech = assign_mechanisms(spec, &p1, &draw)?;
        Ok(Self {
            spec: spec.clone(),
            draw,
            adjacency: p1.adjacency,
            beta: p1.beta,
            mech,
            warnings: p1.warnings,
        })
    }

    fn probe_draw(&self, probe_seed: u64, unit: u64, index: u64) -> ExogenousDraw {
        self.draw.with_fresh_values(probe_seed, tag::PROBE, unit, index)
    }

    fn check_regime(&self, regime: &Regime) -> Result<()> {
        if !regime.is_value_level() {
            return Err(PoscmError::InvalidParameter(format!(
                "regime {:?} touches Phase I; a frozen instance only admits value-level interventions",
                regime.label
            )));
        }
        regime.validate(&self.spec)
    }

    /// Values of probe `index` under `regime`, with `U^V` keyed by
    /// `(probe_seed, unit, index)`.
    pub fn probe_values(&self, regime: &Regime, probe_seed: u64, unit: u64, index: u64) -> Result<Vec<f64>> {
        self.check_regime(regime)?;
        self.probe_values_unchecked(regime, probe_seed, unit, index)
    }

    /// [`Self::probe_values`] for a regime already checked against this instance.
    pub(crate) fn probe_values_unchecked(&self, regime: &Regime, probe_seed: u64, unit: u64, index: u64) -> Result<Vec<f64>> {
        let noise = self.draw.fresh_value_noise(probe_seed, tag::PROBE, unit, index);
        let mut warnings = Vec::new();
        evaluate_values(&self.spec, &self.adjacency, &self.mech, &noise, regime, &mut warnings)
    }

    /// Validates a regime for repeated use with [`Self::probe_values`].
    pub fn admit(&self, regime: &Regime) -> Result<()> {
        self.check_regime(regime)
    }

    pub fn probe(&self, regime: &Arc<Regime>, probe_seed: u64, unit: u64, index: u64) -> Result<World> {
        self.check_regime(regime)?;
        let draw = Arc::new(self.probe_draw(probe_seed, unit, index));
        let mut warnings = self.warnings.clone();
        let value = evaluate_values(&self.spec, &self.adjacency, &self.mech, draw.value_noise(), regime, &mut warnings)?;
        Ok(World {
            id: mix64(unit ^ mix64(index)),
            adjacency: self.adjacency.clone(),
            beta: self.beta.clone(),
            mech: self.mech.clone(),
            value,
            warnings,
            draw,
            regime: Arc::clone(regime),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interventions::Intervention;
    use crate::messages::{MessageMechanism, MessageReplacement};
    use crate::spec::{MechanismOperator, StructureKernel};

    /// A_01 ~ Bern(1/2); V_0 ~ Bern(1/2); V_1 = 1{u < 0.25 + 0.5 V_0} if the
    /// edge is present, else Bern(1/2). Message form H(v) = (1, v).
    fn confounded() -> PoscmSpec {
        let f = MessageMechanism::new(2, |_, v| vec![1.0, v], |mm, u| {
            let s = mm.sum();
            f64::from(u[0] < (1.0 - s[0]) / 2.0 + 0.25 * s[0] + 0.5 * s[1])
        });
        PoscmSpec::builder(2)
            .alpha(StructureKernel::constant(0.5))
            .mechanism(0, MechanismOperator::fixed_direct(|_, u| f64::from(u[0] < 0.5)))
            .mechanism(1, MechanismOperator::fixed_messages(f))
            .build()
            .unwrap()
    }

    fn world(spec: &PoscmSpec, rep: u64, regime: Regime) -> World {
        let d = Arc::new(sample_exogenous(spec, 5, rep));
        generate(spec, &d, &Arc::new(regime)).unwrap()
    }

    #[test]
    fn generation_is_pure() {
        let s = confounded();
        for rep in 0..50 {
            let a = world(&s, rep, Regime::observational());
            let b = world(&s, rep, Regime::observational());
            assert_eq!(a.record().value, b.record().value);
            assert_eq!(a.adjacency, b.adjacency);
        }
    }

    #[test]
    fn value_interventions_leave_phase_one_alone() {
        let s = confounded();
        for rep in 0..200 {
            let a = world(&s, rep, Regime::observational());
            let b = world(&s, rep, Regime::do_values("v", &[(0, 1.0)]).unwrap());
            assert_eq!(a.adjacency, b.adjacency);
            assert_eq!(a.beta, b.beta);
            assert_eq!(b.value[0], 1.0);
            if !a.adjacency.get(0, 1) || a.value[0] == 1.0 {
                assert_eq!(a.value[1], b.value[1]);
            }
        }
    }

    #[test]
    fn clamp_on_absent_edge_is_a_no_op() {
        let s = confounded();
        let clamp = Regime::new("e", vec![Intervention::v_edge_clamp(0, 1, vec![1.0, 1.0])]).unwrap();
        let mut absent = 0;
        for rep in 0..200 {
            let a = world(&s, rep, Regime::observational());
            let b = world(&s, rep, clamp.clone());
            if !a.adjacency.get(0, 1) {
                absent += 1;
                assert_eq!(a.value, b.value);
            }
        }
        assert!(absent > 50);
    }

    #[test]
    fn edge_intervention_on_direct_mechanism_fails() {
        let s = PoscmSpec::builder(2)
            .mechanism(0, MechanismOperator::fixed_direct(|_, _| 0.0))
            .mechanism(1, MechanismOperator::fixed_direct(|_, _| 0.0))
            .build()
            .unwrap();
        let d = Arc::new(sample_exogenous(&s, 0, 0));
        let r = Arc::new(
            Regime::new(
                "e",
                vec![Intervention::VEdge { source: 0, target: 1, replacement: MessageReplacement::Clamp(vec![0.0]) }],
            )
            .unwrap(),
        );
        assert!(matches!(generate(&s, &d, &r), Err(PoscmError::NotMessageAugmented(_))));
    }

    #[test]
    fn context_override_feeds_structure_and_descendants() {
        let s = PoscmSpec::builder(3)
            .all_context_domains(Domain::binary())
            .alpha(StructureKernel::product(|_, _, b| b))
            .context(0, ContextMechanism::constant(0.0))
            .context(1, ContextMechanism::direct(|pa, _| pa.first().map_or(0.0, |p| p.1)))
            .context(2, ContextMechanism::constant(0.0))
            .mechanism(0, MechanismOperator::fixed_direct(|_, _| 1.0))
            .mechanism(1, MechanismOperator::fixed_direct(|pa, _| pa.len() as f64))
            .mechanism(2, MechanismOperator::fixed_direct(|pa, _| pa.len() as f64))
            .all_value_domains(Domain::finite(["0", "1", "2"]).unwrap())
            .build()
            .unwrap();
        let base = world(&s, 0, Regime::observational());
        assert!(base.adjacency.edges().is_empty());
        let w = world(&s, 0, Regime::do_contexts("b", &[(0, 1.0)]).unwrap());
        assert_eq!(w.adjacency.edges(), vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(w.beta, vec![1.0, 1.0, 0.0]);
        assert_eq!(w.value, vec![1.0, 1.0, 2.0]);
        let later = world(&s, 0, Regime::do_contexts("b", &[(1, 1.0)]).unwrap());
        assert_eq!(later.beta[0], base.beta[0]);
        assert_eq!(later.adjacency.edges(), vec![(1, 2)]);
    }

    #[test]
    fn out_of_interval_values_are_clamped_with_a_warning() {
        let s = PoscmSpec::builder(1)
            .value_domain(0, Domain::interval(-1.0, 1.0).unwrap())
            .mechanism(0, MechanismOperator::fixed_direct(|_, _| 3.0))
            .build()
            .unwrap();
        let w = world(&s, 0, Regime::observational());
        assert_eq!(w.value[0], 1.0);
        assert_eq!(w.warnings, vec![ClampWarning { node: 0, channel: Channel::Value, from: 3.0, to: 1.0 }]);
        let bad = PoscmSpec::builder(1).mechanism(0, MechanismOperator::fixed_direct(|_, _| 3.0)).build().unwrap();
        let d = Arc::new(sample_exogenous(&bad, 0, 0));
        assert!(matches!(
            generate(&bad, &d, &Arc::new(Regime::observational())),
            Err(PoscmError::DomainViolation { .. })
        ));
    }

    #[test]
    fn instance_probes_share_phase_one_and_resample_values() {
        let s = confounded();
        let inst = (0..)
            .map(|seed| freeze_instance(&s, seed).unwrap())
            .find(|i| i.adjacency.get(0, 1))
            .unwrap();
        let r = Arc::new(Regime::observational());
        let a = inst.probe(&r, 1, 0, 0).unwrap();
        let b = inst.probe(&r, 1, 0, 1).unwrap();
        assert_eq!(a.adjacency, b.adjacency);
        assert_ne!(a.draw.u_v(1), b.draw.u_v(1));
        let clamp = Regime::do_values("v", &[(0, 1.0)]).unwrap();
        let n = 1000;
        let mean = (0..n).map(|k| inst.probe_values(&clamp, 2, 0, k).unwrap()[1]).sum::<f64>() / n as f64;
        assert!((mean - 0.75).abs() < 0.04, "{mean}");
        assert!(inst.probe_values(&Regime::do_contexts("b", &[(0, 0.0)]).unwrap(), 1, 0, 0).is_err());
    }

    #[test]
    fn absent_edge_instance_ignores_parent_clamps() {
        let s = confounded();
        let inst = (0..)
            .map(|seed| freeze_instance(&s, seed).unwrap())
            .find(|i| !i.adjacency.get(0, 1))
            .unwrap();
        let r0 = Regime::do_values("0", &[(0, 0.0)]).unwrap();
        let r1 = Regime::do_values("1", &[(0, 1.0)]).unwrap();
        for k in 0..500 {
            assert_eq!(inst.probe_values(&r0, 3, 0, k).unwrap()[1], inst.probe_values(&r1, 3, 0, k).unwrap()[1]);
        }
    }
}
