//! Structure readout by repeated Phase-II probing of a frozen instance.
//!
//! For a target `i`, every probe setting clamps all potential parents of `i`
//! jointly. A dyad `j -> i` is tested by comparing the laws of `V_i` at
//! settings that differ only in the value of `V_j`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PoscmError, Result};
use crate::generate::{Adjacency, InstanceHandle};
use crate::interventions::Regime;
use crate::rng::mix64;
use crate::spec::PoscmSpec;
use crate::stats::{bonferroni, two_sample, EmpiricalLaw};

pub const MIN_PROBES: usize = 30;

/// How the potential parents other than the probed source are held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoClamp {
    /// Every combination of the value grids.
    Full,
    /// Listed base assignments, one value per node; the source coordinate
    /// ranges over its grid while the others keep their base value.
    Listed(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeProtocol {
    pub value_grid: Vec<Vec<f64>>,
    pub co_clamp: CoClamp,
    pub probes_per_setting: usize,
    pub test_alpha: f64,
    pub probe_seed: u64,
}

impl ProbeProtocol {
    /// Binary grids `{0, 1}` on every node with a full co-clamp.
    pub fn binary(n: usize, probes_per_setting: usize, test_alpha: f64, probe_seed: u64) -> Self {
        Self {
            value_grid: vec![vec![0.0, 1.0]; n],
            co_clamp: CoClamp::Full,
            probes_per_setting,
            test_alpha,
            probe_seed,
        }
    }

    /// Binary grids with every other parent held at 0.
    pub fn binary_baseline(n: usize, probes_per_setting: usize, test_alpha: f64, probe_seed: u64) -> Self {
        Self { co_clamp: CoClamp::Listed(vec![vec![0.0; n]]), ..Self::binary(n, probes_per_setting, test_alpha, probe_seed) }
    }

    pub fn with_seed(&self, probe_seed: u64) -> Self {
        Self { probe_seed, ..self.clone() }
    }

    pub fn validate(&self, spec: &PoscmSpec) -> Result<()> {
        let n = spec.n();
        if self.value_grid.len() != n {
            return Err(PoscmError::InvalidParameter(format!("{} value grids for {n} nodes", self.value_grid.len())));
        }
        if self.probes_per_setting < MIN_PROBES {
            return Err(PoscmError::InvalidParameter(format!(
                "{} probes per setting; at least {MIN_PROBES} required",
                self.probes_per_setting
            )));
        }
        if !(self.test_alpha > 0.0 && self.test_alpha < 1.0) {
            return Err(PoscmError::InvalidParameter(format!("test level {}", self.test_alpha)));
        }
        for (node, grid) in self.value_grid.iter().enumerate() {
            if grid.is_empty() {
                return Err(PoscmError::InvalidParameter(format!("empty value grid for node {node}")));
            }
            if let Some(v) = grid.iter().find(|v| !spec.value_domain[node].contains(**v)) {
                return Err(PoscmError::DomainViolation { node, channel: "value", value: *v });
            }
        }
        if let CoClamp::Listed(base) = &self.co_clamp {
            if base.is_empty() {
                return Err(PoscmError::InvalidParameter("no co-clamp assignments listed".into()));
            }
            for a in base {
                if a.len() != n {
                    return Err(PoscmError::InvalidParameter(format!("co-clamp assignment of length {}", a.len())));
                }
                for (node, v) in a.iter().enumerate() {
                    if !spec.value_domain[node].contains(*v) {
                        return Err(PoscmError::DomainViolation { node, channel: "value", value: *v });
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DyadTest {
    pub source: usize,
    pub target: usize,
    pub tests: usize,
    /// Smallest Bonferroni-corrected p-value over the dyad's tests.
    pub corrected_p: f64,
    pub present: bool,
    /// No pair of settings differed in the source alone.
    pub inconclusive: bool,
}

#[derive(Debug, Clone)]
pub struct StructureReadout {
    pub adjacency: Adjacency,
    pub dyads: Vec<DyadTest>,
    pub tests: usize,
}

impl StructureReadout {
    pub fn parents(&self, target: usize) -> Vec<usize> {
        self.dyads.iter().filter(|d| d.target == target && d.present).map(|d| d.source).collect()
    }
}

/// Settings for target `i`: assignments to its potential parents, in
/// potential-parent order.
fn settings(protocol: &ProbeProtocol, parents: &[usize], sources: &[usize]) -> Vec<Vec<f64>> {
    let mut out: BTreeMap<Vec<u64>, Vec<f64>> = BTreeMap::new();
    let mut add = |a: Vec<f64>| {
        out.entry(a.iter().map(|v| v.to_bits()).collect()).or_insert(a);
    };
    match &protocol.co_clamp {
        CoClamp::Full => {
            let mut acc = vec![Vec::new()];
            for p in parents {
                acc = acc
                    .into_iter()
                    .flat_map(|a| {
                        protocol.value_grid[*p].iter().map(move |v| {
                            let mut b = a.clone();
                            b.push(*v);
                            b
                        })
                    })
                    .collect();
            }
            acc.into_iter().for_each(&mut add);
        }
        CoClamp::Listed(base) => {
            for a in base {
                let here: Vec<f64> = parents.iter().map(|p| a[*p]).collect();
                add(here.clone());
                for s in sources {
                    let pos = parents.iter().position(|p| p == s).expect("sources are potential parents");
                    for v in &protocol.value_grid[*s] {
                        let mut b = here.clone();
                        b[pos] = *v;
                        add(b);
                    }
                }
            }
        }
    }
    out.into_values().collect()
}

fn setting_key(target: usize, assignment: &[f64]) -> u64 {
    assignment.iter().fold(mix64(target as u64 ^ 0x5157_0000), |acc, v| mix64(acc ^ v.to_bits()))
}

fn value_law(spec: &PoscmSpec, node: usize, x: Vec<f64>) -> Result<EmpiricalLaw> {
    if spec.value_domain[node].is_finite() {
        EmpiricalLaw::from_label_values(&x)
    } else {
        EmpiricalLaw::scalar(x)
    }
}

/// Law of `V_target` over the protocol's probes at one setting.
pub fn setting_law(
    instance: &InstanceHandle,
    protocol: &ProbeProtocol,
    target: usize,
    assignment: &[f64],
) -> Result<EmpiricalLaw> {
    let parents = instance.spec.potential_parents(target);
    let pairs: Vec<(usize, f64)> = parents.iter().copied().zip(assignment.iter().copied()).collect();
    let regime = Regime::do_values("probe", &pairs)?;
    instance.admit(&regime)?;
    let unit = setting_key(target, assignment);
    let x = (0..protocol.probes_per_setting as u64)
        .map(|k| instance.probe_values_unchecked(&regime, protocol.probe_seed, unit, k).map(|v| v[target]))
        .collect::<Result<Vec<f64>>>()?;
    value_law(&instance.spec, target, x)
}

/// Readout of every potential dyad.
pub fn probe_structure(instance: &InstanceHandle, protocol: &ProbeProtocol) -> Result<StructureReadout> {
    let spec = &instance.spec;
    let dyads: Vec<(usize, usize)> = spec
        .order()
        .iter()
        .flat_map(|i| spec.potential_parents(*i).iter().map(move |j| (*j, *i)))
        .collect();
    probe_dyads(instance, protocol, &dyads)
}

/// Readout restricted to `dyads`; unlisted dyads are reported absent.
/// Bonferroni correction runs over all tests performed in the call.
pub fn probe_dyads(instance: &InstanceHandle, protocol: &ProbeProtocol, dyads: &[(usize, usize)]) -> Result<StructureReadout> {
    let spec = &instance.spec;
    protocol.validate(spec)?;
    for (j, i) in dyads {
        spec.check_dyad(*j, *i)?;
    }
    let mut by_target: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (j, i) in dyads {
        let e = by_target.entry(*i).or_default();
        if !e.contains(j) {
            e.push(*j);
        }
    }
    struct Plan {
        target: usize,
        sources: Vec<usize>,
        settings: Vec<Vec<f64>>,
    }
    let plans: Vec<Plan> = by_target
        .into_iter()
        .map(|(target, sources)| {
            let parents = spec.potential_parents(target);
            Plan { target, settings: settings(protocol, parents, &sources), sources }
        })
        .collect();
    let jobs: Vec<(usize, usize)> =
        plans.iter().enumerate().flat_map(|(p, plan)| (0..plan.settings.len()).map(move |s| (p, s))).collect();
    let laws: Vec<EmpiricalLaw> = jobs
        .par_iter()
        .map(|(p, s)| setting_law(instance, protocol, plans[*p].target, &plans[*p].settings[*s]))
        .collect::<Result<_>>()?;
    let mut offset = 0;
    // (dyad index, raw p)
    let mut raw: Vec<(usize, f64)> = Vec::new();
    let mut out: Vec<DyadTest> = Vec::new();
    for plan in &plans {
        let parents = spec.potential_parents(plan.target);
        let laws = &laws[offset..offset + plan.settings.len()];
        offset += plan.settings.len();
        for j in &plan.sources {
            let pos = parents.iter().position(|p| p == j).expect("checked dyad");
            let mut groups: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
            for (k, a) in plan.settings.iter().enumerate() {
                let rest: Vec<u64> =
                    a.iter().enumerate().filter(|(q, _)| *q != pos).map(|(_, v)| v.to_bits()).collect();
                groups.entry(rest).or_default().push(k);
            }
            let d = out.len();
            let mut tests = 0;
            for members in groups.values() {
                for (x, a) in members.iter().enumerate() {
                    for b in &members[x + 1..] {
                        raw.push((d, two_sample(&laws[*a], &laws[*b])?.p_value));
                        tests += 1;
                    }
                }
            }
            out.push(DyadTest {
                source: *j,
                target: plan.target,
                tests,
                corrected_p: 1.0,
                present: false,
                inconclusive: tests == 0,
            });
        }
    }
    let corrected = bonferroni(&raw.iter().map(|(_, p)| *p).collect::<Vec<_>>());
    for ((d, _), p) in raw.iter().zip(corrected) {
        out[*d].corrected_p = out[*d].corrected_p.min(p);
    }
    let mut adjacency = Adjacency::empty(spec.n());
    for d in &mut out {
        d.present = d.corrected_p < protocol.test_alpha;
        if d.present {
            adjacency.set(d.source, d.target, true);
        }
    }
    Ok(StructureReadout { adjacency, dyads: out, tests: raw.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::exogenous::sample_exogenous;
    use crate::spec::{MechanismOperator, StructureKernel};
    use std::sync::Arc;

    /// `V_1 ~ Bern(q[V_0])` when the edge is present, `Bern(1/2)` otherwise.
    fn two_node(present: bool, q: [f64; 2]) -> InstanceHandle {
        let spec = PoscmSpec::builder(2)
            .alpha(StructureKernel::constant(if present { 1.0 } else { 0.0 }))
            .mechanism(0, MechanismOperator::fixed_direct(|_, u| f64::from(u8::from(u[0] < 0.5))))
            .mechanism(
                1,
                MechanismOperator::fixed_direct(move |pv, u| {
                    let p = pv.first().map_or(0.5, |(_, v)| q[usize::from(*v > 0.5)]);
                    f64::from(u8::from(u[0] < p))
                }),
            )
            .build()
            .unwrap();
        InstanceHandle::from_draw(&spec, Arc::new(sample_exogenous(&spec, 0, 0))).unwrap()
    }

    #[test]
    fn present_edge_is_detected() {
        let inst = two_node(true, [0.2, 0.8]);
        let r = probe_structure(&inst, &ProbeProtocol::binary(2, 500, 0.01, 1)).unwrap();
        assert!(r.adjacency.get(0, 1));
        assert_eq!(r.tests, 1);
        assert!(r.dyads[0].corrected_p < 1e-20);
    }

    #[test]
    fn absent_edge_p_values_look_uniform() {
        let inst = two_node(false, [0.2, 0.8]);
        let ps: Vec<f64> = (0..200)
            .map(|s| probe_structure(&inst, &ProbeProtocol::binary(2, 100, 0.05, s)).unwrap().dyads[0].corrected_p)
            .collect();
        let rejections = ps.iter().filter(|p| **p < 0.05).count();
        // Fisher's test is conservative on discrete data.
        assert!(rejections <= 20, "{rejections}");
        assert!(ps.iter().filter(|p| **p > 0.5).count() > 60);
    }

    #[test]
    fn settings_full_and_listed() {
        let p = ProbeProtocol::binary(3, 30, 0.01, 0);
        assert_eq!(settings(&p, &[0, 1], &[0, 1]).len(), 4);
        let l = ProbeProtocol::binary_baseline(3, 30, 0.01, 0);
        let s = settings(&l, &[0, 1], &[1]);
        assert_eq!(s, vec![vec![0.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn single_point_grid_is_inconclusive() {
        let inst = two_node(true, [0.2, 0.8]);
        let mut p = ProbeProtocol::binary(2, 40, 0.01, 0);
        p.value_grid[0] = vec![1.0];
        let r = probe_structure(&inst, &p).unwrap();
        assert!(r.dyads[0].inconclusive && !r.dyads[0].present);
    }

    #[test]
    fn protocol_validation() {
        let inst = two_node(true, [0.2, 0.8]);
        assert!(probe_structure(&inst, &ProbeProtocol::binary(2, 10, 0.01, 0)).is_err());
        let mut p = ProbeProtocol::binary(2, 30, 0.01, 0);
        p.value_grid[1] = vec![2.0];
        assert!(p.validate(&inst.spec).is_err());
        let spec = PoscmSpec::builder(1)
            .value_domain(0, Domain::interval(0.0, 1.0).unwrap())
            .mechanism(0, MechanismOperator::fixed_direct(|_, u| u[0]))
            .build()
            .unwrap();
        assert!(ProbeProtocol::binary(1, 30, 0.01, 0).validate(&spec).is_ok());
    }

    #[test]
    fn readout_is_reproducible() {
        let inst = two_node(true, [0.4, 0.6]);
        let p = ProbeProtocol::binary(2, 60, 0.01, 9);
        let a = probe_structure(&inst, &p).unwrap();
        let b = probe_structure(&inst, &p).unwrap();
        assert_eq!(a.dyads, b.dyads);
    }
}
