//! Grid estimates of the structure, context and value kernels.
//!
//! Experimental units are frozen instances drawn under a context-level
//! regime. Parent sets used for conditioning always come from probing
//! ([`probe_dyads`]); the adjacency itself is never read.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::probe::{probe_dyads, ProbeProtocol};
use crate::error::{PoscmError, Result};
use crate::exogenous::sample_exogenous;
use crate::generate::InstanceHandle;
use crate::interventions::Regime;
use crate::rng::{derive_seed, tag};
use crate::spec::PoscmSpec;
use crate::stats::EmpiricalLaw;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelTarget {
    /// Law of the out-row `A_{j,>j}` under `do(beta_j = b)`, coded as an
    /// integer with bit `k` for the `k`-th later node.
    Structure { source: usize, targets: Vec<usize> },
    Context { target: usize, parents: Vec<usize> },
    Value { target: usize, parents: Vec<usize> },
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelCell {
    /// Grid point; value-kernel cells append the conditioning context.
    pub input: Vec<f64>,
    #[serde(skip)]
    pub law: EmpiricalLaw,
    pub n: usize,
    /// Units accepted into the cell over units drawn for it.
    pub conditioning_frequency: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelEstimate {
    pub target: KernelTarget,
    pub cells: Vec<KernelCell>,
    pub n_per: usize,
    pub warnings: Vec<String>,
}

impl KernelEstimate {
    pub fn cell(&self, input: &[f64]) -> Option<&KernelCell> {
        self.cells.iter().find(|c| c.input == input)
    }
}

/// Unit source shared by the estimators.
#[derive(Debug, Clone)]
pub struct KernelSampler {
    pub spec: PoscmSpec,
    pub protocol: ProbeProtocol,
    pub seed: u64,
    /// Units drawn per parallel batch.
    pub batch: usize,
    /// Cap on units drawn per cell, as a multiple of `n_per`.
    pub max_draw_factor: usize,
}

impl KernelSampler {
    pub fn new(spec: PoscmSpec, protocol: ProbeProtocol, seed: u64) -> Result<Self> {
        protocol.validate(&spec)?;
        Ok(Self { spec, protocol, seed, batch: 256, max_draw_factor: 100 })
    }

    /// Draws units for one cell in index order until `accept` has taken
    /// `n_per` of them. `visit` returns `None` for rejected units.
    fn collect<T: Send>(
        &self,
        cell_salt: u64,
        regime: &Regime,
        n_per: usize,
        visit: impl Fn(u64, &InstanceHandle) -> Result<Option<T>> + Sync,
    ) -> Result<(Vec<T>, usize)> {
        if n_per == 0 {
            return Err(PoscmError::InvalidParameter("n_per must be at least 1".into()));
        }
        regime.validate(&self.spec)?;
        let seed = derive_seed(self.seed, cell_salt);
        let cap = n_per.saturating_mul(self.max_draw_factor);
        let mut kept = Vec::with_capacity(n_per);
        let mut drawn = 0usize;
        while kept.len() < n_per && drawn < cap {
            let hi = (drawn + self.batch.max(1)).min(cap);
            let batch: Vec<Option<T>> = (drawn as u64..hi as u64)
                .into_par_iter()
                .map(|r| {
                    let draw = Arc::new(sample_exogenous(&self.spec, seed, r));
                    let unit = InstanceHandle::under(&self.spec, draw, regime)?;
                    visit(r, &unit)
                })
                .collect::<Result<_>>()?;
            for item in batch {
                drawn += 1;
                if let Some(t) = item {
                    kept.push(t);
                    if kept.len() == n_per {
                        break;
                    }
                }
            }
        }
        if kept.is_empty() {
            return Err(PoscmError::EmptyCell(format!("no unit accepted in {drawn} draws under {}", regime.label)));
        }
        if kept.len() < n_per {
            return Err(PoscmError::InsufficientSamples(format!(
                "{} of {n_per} units accepted in {drawn} draws under {}",
                kept.len(),
                regime.label
            )));
        }
        Ok((kept, drawn))
    }

    fn unit_protocol(&self, cell_salt: u64, r: u64) -> ProbeProtocol {
        self.protocol.with_seed(derive_seed(derive_seed(self.protocol.probe_seed, cell_salt), r))
    }

    /// Probed parent set of `target`.
    fn parents(&self, unit: &InstanceHandle, target: usize, cell_salt: u64, r: u64) -> Result<Vec<usize>> {
        let dyads: Vec<(usize, usize)> = self.spec.potential_parents(target).iter().map(|j| (*j, target)).collect();
        if dyads.is_empty() {
            return Ok(Vec::new());
        }
        Ok(probe_dyads(unit, &self.unit_protocol(cell_salt, r), &dyads)?.parents(target))
    }
}

fn same_set(a: &[usize], b: &[usize]) -> bool {
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_unstable();
    b.sort_unstable();
    a == b
}

fn context_law(spec: &PoscmSpec, node: usize, x: Vec<f64>) -> Result<EmpiricalLaw> {
    if spec.context_domain[node].is_finite() {
        EmpiricalLaw::from_label_values(&x)
    } else {
        EmpiricalLaw::scalar(x)
    }
}

fn value_law(spec: &PoscmSpec, node: usize, x: Vec<f64>) -> Result<EmpiricalLaw> {
    if spec.value_domain[node].is_finite() {
        EmpiricalLaw::from_label_values(&x)
    } else {
        EmpiricalLaw::scalar(x)
    }
}

/// Empirical `mu_j(b)` for each `b` in `beta_grid`, from probed out-rows.
pub fn estimate_structure_kernel(sampler: &KernelSampler, j: usize, beta_grid: &[f64], n_per: usize) -> Result<KernelEstimate> {
    let spec = &sampler.spec;
    spec.check_node(j)?;
    let targets: Vec<usize> = spec.order()[spec.rank(j) + 1..].to_vec();
    if targets.len() > 62 {
        return Err(PoscmError::InvalidParameter(format!("{} later nodes; at most 62 supported", targets.len())));
    }
    let dyads: Vec<(usize, usize)> = targets.iter().map(|i| (j, *i)).collect();
    let mut cells = Vec::new();
    let mut warnings = Vec::new();
    for (c, b) in beta_grid.iter().enumerate() {
        let regime = Regime::do_contexts(format!("do(beta_{j}={b})"), &[(j, *b)])?;
        let salt = mix_cell(tag::EDGE, j, c);
        let (codes, drawn) = sampler.collect(salt, &regime, n_per, |r, unit| {
            if dyads.is_empty() {
                return Ok(Some(0i64));
            }
            let readout = probe_dyads(unit, &sampler.unit_protocol(salt, r), &dyads)?;
            Ok(Some(
                targets.iter().enumerate().fold(0i64, |acc, (k, i)| acc | (i64::from(readout.adjacency.get(j, *i)) << k)),
            ))
        })?;
        for (k, i) in targets.iter().enumerate() {
            let ones = codes.iter().filter(|c| (*c >> k) & 1 == 1).count();
            if ones == 0 || ones == codes.len() {
                warnings.push(format!("positivity: empirical P(A_{j}{i} = 1 | beta_{j} = {b}) = {}", ones as f64 / codes.len() as f64));
            }
        }
        cells.push(KernelCell {
            input: vec![*b],
            law: EmpiricalLaw::labels(codes)?,
            n: n_per,
            conditioning_frequency: n_per as f64 / drawn as f64,
        });
    }
    Ok(KernelEstimate { target: KernelTarget::Structure { source: j, targets }, cells, n_per, warnings })
}

/// Empirical `K^beta_{i,S}(. | b_S)` for each `b_S` in `grid`, conditioning
/// on the probed parent set of `i` being `S`.
pub fn estimate_context_kernel(
    sampler: &KernelSampler,
    i: usize,
    parents: &[usize],
    grid: &[Vec<f64>],
    n_per: usize,
) -> Result<KernelEstimate> {
    let spec = &sampler.spec;
    check_parent_set(spec, i, parents)?;
    let mut cells = Vec::new();
    for (c, b_s) in grid.iter().enumerate() {
        if b_s.len() != parents.len() {
            return Err(PoscmError::InvalidParameter(format!("grid point {b_s:?} for {} parents", parents.len())));
        }
        let assignment: Vec<(usize, f64)> = parents.iter().copied().zip(b_s.iter().copied()).collect();
        let regime = if assignment.is_empty() {
            Regime::observational()
        } else {
            Regime::do_contexts(format!("do(beta_S={b_s:?})"), &assignment)?
        };
        let salt = mix_cell(tag::CONTEXT, i, c);
        let (x, drawn) = sampler.collect(salt, &regime, n_per, |r, unit| {
            let found = sampler.parents(unit, i, salt, r)?;
            Ok(same_set(&found, parents).then(|| unit.beta[i]))
        })?;
        cells.push(KernelCell {
            input: b_s.clone(),
            law: context_law(spec, i, x)?,
            n: n_per,
            conditioning_frequency: n_per as f64 / drawn as f64,
        });
    }
    Ok(KernelEstimate { target: KernelTarget::Context { target: i, parents: parents.to_vec() }, cells, n_per, warnings: Vec::new() })
}

/// Empirical `K^V_{i,S}(. | v_S, b_i)` over `v_grid` and, when given,
/// the context values `beta_condition`. Each cell gets `n_per` accepted units;
/// all `v_S` points reuse the same units.
pub fn estimate_value_kernel(
    sampler: &KernelSampler,
    i: usize,
    parents: &[usize],
    v_grid: &[Vec<f64>],
    beta_condition: Option<&[f64]>,
    n_per: usize,
) -> Result<KernelEstimate> {
    let spec = &sampler.spec;
    check_parent_set(spec, i, parents)?;
    let regimes: Vec<Regime> = v_grid
        .iter()
        .map(|v| {
            if v.len() != parents.len() {
                return Err(PoscmError::InvalidParameter(format!("grid point {v:?} for {} parents", parents.len())));
            }
            let pairs: Vec<(usize, f64)> = parents.iter().copied().zip(v.iter().copied()).collect();
            Regime::do_values(format!("do(V_S={v:?})"), &pairs)
        })
        .collect::<Result<_>>()?;
    for r in &regimes {
        r.validate(spec)?;
    }
    let groups: Vec<Option<f64>> = match beta_condition {
        Some(bs) if !bs.is_empty() => bs.iter().map(|b| Some(*b)).collect(),
        _ => vec![None],
    };
    let salt = mix_cell(tag::VALUE, i, 0);
    let value_seed = derive_seed(sampler.seed, salt ^ tag::PROBE);
    // Each accepted unit yields its context and one V_i per grid point.
    let visit = |r: u64, unit: &InstanceHandle| -> Result<Option<(f64, Vec<f64>)>> {
        let found = sampler.parents(unit, i, salt, r)?;
        if !same_set(&found, parents) {
            return Ok(None);
        }
        let b = unit.beta[i];
        if groups.iter().all(|g| g.is_some_and(|g| g != b)) {
            return Ok(None);
        }
        let vals = regimes
            .iter()
            .map(|reg| unit.probe_values_unchecked(reg, value_seed, r, 0).map(|v| v[i]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some((b, vals)))
    };
    // Accept in index order until every context group holds n_per units.
    let mut per_group: Vec<Vec<Vec<f64>>> = vec![Vec::new(); groups.len()];
    let mut drawn = 0usize;
    let cap = n_per.saturating_mul(sampler.max_draw_factor).saturating_mul(groups.len());
    let seed = derive_seed(sampler.seed, salt);
    let observational = Regime::observational();
    while per_group.iter().any(|g| g.len() < n_per) && drawn < cap {
        let hi = (drawn + sampler.batch.max(1)).min(cap);
        let batch: Vec<Option<(f64, Vec<f64>)>> = (drawn as u64..hi as u64)
            .into_par_iter()
            .map(|r| {
                let draw = Arc::new(sample_exogenous(spec, seed, r));
                let unit = InstanceHandle::under(spec, draw, &observational)?;
                visit(r, &unit)
            })
            .collect::<Result<_>>()?;
        drawn = hi;
        for (b, vals) in batch.into_iter().flatten() {
            let g = groups.iter().position(|g| g.is_none_or(|g| g == b)).expect("filtered in visit");
            if per_group[g].len() < n_per {
                per_group[g].push(vals);
            }
        }
    }
    for (g, units) in groups.iter().zip(&per_group) {
        if units.is_empty() {
            return Err(PoscmError::EmptyCell(format!("no unit with parents {parents:?} and context {g:?}")));
        }
        if units.len() < n_per {
            return Err(PoscmError::InsufficientSamples(format!(
                "{} of {n_per} units with parents {parents:?} and context {g:?} in {drawn} draws",
                units.len()
            )));
        }
    }
    let mut cells = Vec::new();
    for (g, units) in groups.iter().zip(&per_group) {
        for (k, v) in v_grid.iter().enumerate() {
            let mut input = v.clone();
            input.extend(g.iter());
            cells.push(KernelCell {
                input,
                law: value_law(spec, i, units.iter().map(|u| u[k]).collect())?,
                n: n_per,
                conditioning_frequency: n_per as f64 / drawn as f64,
            });
        }
    }
    Ok(KernelEstimate { target: KernelTarget::Value { target: i, parents: parents.to_vec() }, cells, n_per, warnings: Vec::new() })
}

fn check_parent_set(spec: &PoscmSpec, i: usize, parents: &[usize]) -> Result<()> {
    spec.check_node(i)?;
    for (k, j) in parents.iter().enumerate() {
        spec.check_dyad(*j, i)?;
        if parents[..k].contains(j) {
            return Err(PoscmError::InvalidParameter(format!("parent {j} listed twice")));
        }
    }
    Ok(())
}

fn mix_cell(family: u64, node: usize, cell: usize) -> u64 {
    crate::rng::mix64(family ^ crate::rng::mix64(((node as u64) << 32) | cell as u64))
}
