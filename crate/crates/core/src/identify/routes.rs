//! Recovery of value messages `H_{i<-j}` by law matching (Routes A and B)
//! and by paired-world replay (Route C).

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::probe::{probe_dyads, ProbeProtocol};
use crate::error::{PoscmError, Result};
use crate::exogenous::sample_exogenous;
use crate::generate::{generate, InstanceHandle};
use crate::interventions::{Intervention, Regime};
use crate::messages::Channel;
use crate::rng::{derive_seed, tag};
use crate::spec::PoscmSpec;
use crate::stats::{ks_statistic, total_variation, two_sample, EmpiricalLaw};

/// Asymptotic 95% quantile of `sqrt(n m / (n + m)) D` under the null.
const KS_Q95: f64 = 1.358;
/// Near-minimal clamps further than this many grid spacings from the
/// minimizer make a match ambiguous.
const AMBIGUITY_SPACINGS: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    /// Joint node controls, conditioning on the probed edge `j -> i`.
    A,
    /// Matching on the unconditioned unit population.
    B,
}

#[derive(Debug, Clone)]
pub struct RouteAbConfig {
    pub route: Route,
    pub target: usize,
    pub source: usize,
    pub v_grid: Vec<f64>,
    pub clamp_grid: Vec<Vec<f64>>,
    /// Values held on the other potential parents of the target.
    pub others: Vec<(usize, f64)>,
    pub n_per: usize,
    pub seed: u64,
    /// Readout protocol for the conditioning edge; Route A only.
    pub protocol: Option<ProbeProtocol>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MessageMatch {
    pub v: f64,
    pub estimate: Vec<f64>,
    pub clamp_index: usize,
    /// Distance between the baseline law and the matched clamp law.
    pub residual: f64,
    /// Two-sample test of the baseline against the matched clamp.
    pub p_value: f64,
    pub ambiguous: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MessageRecovery {
    pub route: Route,
    pub target: usize,
    pub source: usize,
    pub matches: Vec<MessageMatch>,
    pub units: usize,
    pub grid_spacing: f64,
    pub tie_tolerance: f64,
}

impl MessageRecovery {
    pub fn max_error(&self, truth: impl Fn(f64) -> Vec<f64>) -> f64 {
        self.matches
            .iter()
            .map(|m| euclid(&m.estimate, &truth(m.v)))
            .fold(0.0, f64::max)
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check_message_dyad(spec: &PoscmSpec, source: usize, target: usize) -> Result<()> {
    spec.check_dyad(source, target)?;
    if !spec.is_message_augmented(target, Channel::Value) {
        return Err(PoscmError::NotMessageAugmented(format!("value channel of node {target}")));
    }
    Ok(())
}

fn law(spec: &PoscmSpec, node: usize, x: Vec<f64>) -> Result<EmpiricalLaw> {
    if spec.value_domain[node].is_finite() {
        EmpiricalLaw::from_label_values(&x)
    } else {
        EmpiricalLaw::scalar(x)
    }
}

/// KS statistic for scalar laws, total variation for label laws.
pub fn law_distance(a: &EmpiricalLaw, b: &EmpiricalLaw) -> Result<f64> {
    match (a, b) {
        (EmpiricalLaw::Scalar { sorted: x }, EmpiricalLaw::Scalar { sorted: y }) => Ok(ks_statistic(x, y)),
        _ => total_variation(a, b),
    }
}

/// Matching with constant clamps: for each `v`, the clamp whose law of
/// `V_i` is closest to the law under `do(V_j = v)`.
pub fn identify_message_route_ab(spec: &PoscmSpec, cfg: &RouteAbConfig) -> Result<MessageRecovery> {
    let (i, j) = (cfg.target, cfg.source);
    check_message_dyad(spec, j, i)?;
    if cfg.v_grid.is_empty() || cfg.clamp_grid.len() < 2 || cfg.n_per < 2 {
        return Err(PoscmError::InvalidParameter("need a value grid, two clamps and two units".into()));
    }
    let dim = cfg.clamp_grid[0].len();
    if cfg.clamp_grid.iter().any(|m| m.len() != dim) {
        return Err(PoscmError::InvalidParameter("clamps of differing dimension".into()));
    }
    for (k, _) in &cfg.others {
        spec.check_dyad(*k, i)?;
        if *k == j {
            return Err(PoscmError::ConflictingInterventions(format!("source {j} listed among held parents")));
        }
    }
    let held = |vj: f64| -> Vec<(usize, f64)> {
        let mut a = cfg.others.clone();
        a.push((j, vj));
        a
    };
    let mut experiments: Vec<Regime> = Vec::new();
    for v in &cfg.v_grid {
        experiments.push(Regime::do_values(format!("do(V_{j}={v})"), &held(*v))?);
    }
    for m in &cfg.clamp_grid {
        let mut r = Regime::do_values(format!("clamp {m:?}"), &held(cfg.v_grid[0]))?;
        r.push(Intervention::v_edge_clamp(j, i, m.clone()))?;
        experiments.push(r);
    }
    for r in &experiments {
        r.validate(spec)?;
    }
    let protocol = match cfg.route {
        Route::A => Some(
            cfg.protocol
                .as_ref()
                .ok_or_else(|| PoscmError::InvalidParameter("Route A needs a readout protocol".into()))?,
        ),
        Route::B => None,
    };
    if let Some(p) = protocol {
        p.validate(spec)?;
    }
    let unit_seed = derive_seed(cfg.seed, tag::MODEL);
    let noise_seed = derive_seed(cfg.seed, tag::PROBE);
    let observational = Regime::observational();
    let visit = |r: u64| -> Result<Option<Vec<f64>>> {
        let unit = InstanceHandle::under(spec, Arc::new(sample_exogenous(spec, unit_seed, r)), &observational)?;
        if let Some(p) = protocol {
            let readout = probe_dyads(&unit, &p.with_seed(derive_seed(p.probe_seed, r)), &[(j, i)])?;
            if !readout.adjacency.get(j, i) {
                return Ok(None);
            }
        }
        experiments
            .iter()
            .enumerate()
            .map(|(e, reg)| unit.probe_values_unchecked(reg, noise_seed, r, e as u64).map(|v| v[i]))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    };
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_per);
    let (mut drawn, cap, batch) = (0usize, cfg.n_per.saturating_mul(100), 256usize);
    while rows.len() < cfg.n_per && drawn < cap {
        let hi = (drawn + batch).min(cap);
        let got: Vec<Option<Vec<f64>>> = (drawn as u64..hi as u64).into_par_iter().map(visit).collect::<Result<_>>()?;
        drawn = hi;
        rows.extend(got.into_iter().flatten().take(cfg.n_per - rows.len()));
    }
    if rows.len() < cfg.n_per {
        return Err(PoscmError::InsufficientSamples(format!("{} of {} units with edge {j}->{i}", rows.len(), cfg.n_per)));
    }
    let laws: Vec<EmpiricalLaw> = (0..experiments.len())
        .map(|e| law(spec, i, rows.iter().map(|r| r[e]).collect()))
        .collect::<Result<_>>()?;
    let (baselines, clamps) = laws.split_at(cfg.v_grid.len());
    let n = cfg.n_per as f64;
    let tie_tolerance = 1.5 * KS_Q95 * (2.0 / n).sqrt();
    let grid_spacing = cfg
        .clamp_grid
        .iter()
        .enumerate()
        .flat_map(|(a, x)| cfg.clamp_grid[a + 1..].iter().map(move |y| euclid(x, y)))
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let mut matches = Vec::new();
    for (v, base) in cfg.v_grid.iter().zip(baselines) {
        let d: Vec<f64> = clamps.iter().map(|c| law_distance(base, c)).collect::<Result<_>>()?;
        let (best, residual) = d
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, x)| if *x < acc.1 { (k, *x) } else { acc });
        let ambiguous = d.iter().enumerate().any(|(k, x)| {
            *x <= residual + tie_tolerance
                && euclid(&cfg.clamp_grid[k], &cfg.clamp_grid[best]) > AMBIGUITY_SPACINGS * grid_spacing
        });
        matches.push(MessageMatch {
            v: *v,
            estimate: cfg.clamp_grid[best].clone(),
            clamp_index: best,
            residual,
            p_value: two_sample(base, &clamps[best])?.p_value,
            ambiguous,
        });
    }
    Ok(MessageRecovery {
        route: cfg.route,
        target: i,
        source: j,
        matches,
        units: cfg.n_per,
        grid_spacing,
        tie_tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClampSearch {
    /// Candidate clamps; a block matches when exactly one reproduces the baseline.
    Grid { clamps: Vec<Vec<f64>> },
    /// One-dimensional messages in `[lo, hi]`, located by bisection.
    Interval { lo: f64, hi: f64 },
}

#[derive(Debug, Clone)]
pub struct RouteCConfig {
    pub target: usize,
    pub source: usize,
    pub search: ClampSearch,
    pub blocks: usize,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockStatus {
    Matched,
    /// The clamp had no effect on the block (no edge).
    Skipped,
    NoMatch,
    MultipleMatches,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayBlock {
    pub replicate: u64,
    pub v_source: f64,
    pub baseline: f64,
    pub estimate: Option<Vec<f64>>,
    pub status: BlockStatus,
}

/// Paired-world replay: per draw, the clamp whose `V_i` equals the baseline
/// `V_i` on the same exogenous draw.
pub fn identify_message_route_c(spec: &PoscmSpec, cfg: &RouteCConfig) -> Result<Vec<ReplayBlock>> {
    let (i, j) = (cfg.target, cfg.source);
    check_message_dyad(spec, j, i)?;
    if !(cfg.tolerance >= 0.0) {
        return Err(PoscmError::InvalidParameter(format!("tolerance {}", cfg.tolerance)));
    }
    match &cfg.search {
        ClampSearch::Grid { clamps } if clamps.is_empty() => {
            return Err(PoscmError::InvalidParameter("empty clamp grid".into()))
        }
        ClampSearch::Interval { lo, hi } if !(lo < hi) => {
            return Err(PoscmError::InvalidParameter(format!("interval [{lo}, {hi}]")))
        }
        _ => {}
    }
    let baseline_regime = Arc::new(Regime::observational());
    let block = |r: u64| -> Result<ReplayBlock> {
        let draw = Arc::new(sample_exogenous(spec, cfg.seed, r));
        let base = generate(spec, &draw, &baseline_regime)?;
        let (baseline, v_source) = (base.value[i], base.value[j]);
        let at = |m: &[f64]| -> Result<f64> {
            let regime = Arc::new(Regime::new("clamp", vec![Intervention::v_edge_clamp(j, i, m.to_vec())])?);
            Ok(generate(spec, &draw, &regime)?.value[i])
        };
        let tol = cfg.tolerance;
        let (estimate, status) = match &cfg.search {
            ClampSearch::Grid { clamps } => {
                let vals: Vec<f64> = clamps.iter().map(|m| at(m)).collect::<Result<_>>()?;
                let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
                let hits: Vec<usize> = (0..vals.len()).filter(|k| (vals[*k] - baseline).abs() <= tol).collect();
                if clamps.len() > 1 && hi - lo <= tol {
                    (None, BlockStatus::Skipped)
                } else {
                    match hits.as_slice() {
                        [] => (None, BlockStatus::NoMatch),
                        [k] => (Some(clamps[*k].clone()), BlockStatus::Matched),
                        _ => (None, BlockStatus::MultipleMatches),
                    }
                }
            }
            ClampSearch::Interval { lo, hi } => {
                let f = |m: f64| at(&[m]).map(|v| v - baseline);
                let (mut a, mut b) = (*lo, *hi);
                let (mut fa, fb, fm) = (f(a)?, f(b)?, f(0.5 * (a + b))?);
                if (fa - fb).abs() <= tol && (fa - fm).abs() <= tol {
                    (None, BlockStatus::Skipped)
                } else if fa.abs() <= tol && fb.abs() > tol {
                    (Some(vec![a]), BlockStatus::Matched)
                } else if fb.abs() <= tol && fa.abs() > tol {
                    (Some(vec![b]), BlockStatus::Matched)
                } else if fa.signum() == fb.signum() {
                    (None, BlockStatus::NoMatch)
                } else {
                    for _ in 0..200 {
                        let mid = 0.5 * (a + b);
                        if mid <= a || mid >= b {
                            break;
                        }
                        let fmid = f(mid)?;
                        if fmid == 0.0 {
                            (a, b) = (mid, mid);
                            break;
                        }
                        if fmid.signum() == fa.signum() {
                            (a, fa) = (mid, fmid);
                        } else {
                            b = mid;
                        }
                    }
                    let m = 0.5 * (a + b);
                    let step = 1e-6 * (hi - lo).max(1.0);
                    let flat = f(m - step)?.abs() <= tol && f(m + step)?.abs() <= tol;
                    if flat {
                        (None, BlockStatus::MultipleMatches)
                    } else if f(m)?.abs() <= tol.max(f64::EPSILON * baseline.abs() * 4.0) {
                        (Some(vec![m]), BlockStatus::Matched)
                    } else {
                        (None, BlockStatus::NoMatch)
                    }
                }
            }
        };
        Ok(ReplayBlock { replicate: r, v_source, baseline, estimate, status })
    };
    (0..cfg.blocks as u64).into_par_iter().map(block).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messages::Univariate;
    use crate::models::zoo::{message_channel_model, two_node_confounding};

    fn grid(lo: f64, hi: f64, step: f64) -> Vec<Vec<f64>> {
        let k = ((hi - lo) / step).round() as usize;
        (0..=k).map(|t| vec![lo + step * t as f64]).collect()
    }

    fn ab(route: Route, channel: Univariate, spacing: f64) -> (MessageRecovery, f64) {
        let spec = message_channel_model(channel.clone(), 0.7, 0.1).unwrap();
        let mut protocol = ProbeProtocol::binary(3, 40, 1e-3, 4);
        protocol.value_grid = vec![vec![-1.0, 1.0], vec![0.0], vec![0.0]];
        let cfg = RouteAbConfig {
            route,
            target: 2,
            source: 0,
            v_grid: vec![-1.5, -0.5, 0.0, 0.7, 1.5],
            clamp_grid: grid(-2.0, 2.0, spacing),
            others: vec![(1, 0.0)],
            n_per: 2000,
            seed: 3,
            protocol: Some(protocol),
        };
        let rec = identify_message_route_ab(&spec, &cfg).unwrap();
        let err = rec.max_error(|v| vec![channel.eval(v)]);
        (rec, err)
    }

    #[test]
    fn route_a_recovers_identity_within_spacing() {
        let (rec, err) = ab(Route::A, Univariate::Identity, 0.05);
        assert!(err <= 0.05, "{err}");
        assert!(rec.matches.iter().all(|m| !m.ambiguous));
    }

    #[test]
    fn route_b_recovers_tanh_within_spacing() {
        let (_, err) = ab(Route::B, Univariate::tanh(), 0.05);
        assert!(err <= 0.05, "{err}");
    }

    #[test]
    fn two_node_messages_match_q() {
        let spec = two_node_confounding(0.5, 0.2, 0.8).unwrap();
        let clamps: Vec<Vec<f64>> = (1..20).map(|k| vec![1.0, 0.05 * k as f64]).collect();
        let cfg = RouteAbConfig {
            route: Route::B,
            target: 1,
            source: 0,
            v_grid: vec![0.0, 1.0],
            clamp_grid: clamps,
            others: vec![],
            n_per: 20_000,
            seed: 1,
            protocol: None,
        };
        let rec = identify_message_route_ab(&spec, &cfg).unwrap();
        for (m, q) in rec.matches.iter().zip([0.2, 0.8]) {
            assert!((m.estimate[1] - q).abs() < 0.051, "{m:?}");
            assert!(m.p_value > 0.05, "{m:?}");
        }
    }

    #[test]
    fn route_a_requires_protocol_and_message_form() {
        let spec = message_channel_model(Univariate::Identity, 0.7, 0.1).unwrap();
        let cfg = RouteAbConfig {
            route: Route::A,
            target: 2,
            source: 0,
            v_grid: vec![0.0],
            clamp_grid: grid(-1.0, 1.0, 0.5),
            others: vec![],
            n_per: 10,
            seed: 0,
            protocol: None,
        };
        assert!(identify_message_route_ab(&spec, &cfg).is_err());
    }

    #[test]
    fn route_c_interval_is_pointwise_exact() {
        let channel = Univariate::tanh();
        let spec = message_channel_model(channel.clone(), 0.6, 0.1).unwrap();
        let cfg = RouteCConfig {
            target: 2,
            source: 0,
            search: ClampSearch::Interval { lo: -3.0, hi: 3.0 },
            blocks: 200,
            seed: 8,
            tolerance: 1e-9,
        };
        let blocks = identify_message_route_c(&spec, &cfg).unwrap();
        let matched: Vec<_> = blocks.iter().filter(|b| b.status == BlockStatus::Matched).collect();
        let skipped = blocks.iter().filter(|b| b.status == BlockStatus::Skipped).count();
        assert_eq!(matched.len() + skipped, blocks.len());
        assert!(matched.len() > 90 && skipped > 50);
        for b in matched {
            let e = b.estimate.as_ref().unwrap()[0];
            assert!((e - channel.eval(b.v_source)).abs() <= 1e-9);
        }
    }

    #[test]
    fn route_c_grid_matches_the_true_message() {
        let spec = two_node_confounding(0.5, 0.2, 0.8).unwrap();
        // With the edge present, clamp (1, q) gives V_2 = 1{u < q}; blocks
        // with u outside [0.2, 0.8) respond to neither clamp and are skipped.
        let cfg = RouteCConfig {
            target: 1,
            source: 0,
            search: ClampSearch::Grid { clamps: vec![vec![1.0, 0.2], vec![1.0, 0.8]] },
            blocks: 400,
            seed: 2,
            tolerance: 1e-9,
        };
        let blocks = identify_message_route_c(&spec, &cfg).unwrap();
        for b in &blocks {
            if let (BlockStatus::Matched, Some(e)) = (b.status, &b.estimate) {
                assert_eq!(e[1], if b.v_source > 0.5 { 0.8 } else { 0.2 });
            }
        }
        assert!(blocks.iter().any(|b| b.status == BlockStatus::Matched));
        assert!(blocks.iter().any(|b| b.status == BlockStatus::Skipped));
        assert!(blocks.iter().all(|b| b.status != BlockStatus::NoMatch));
    }

    #[test]
    fn route_c_flags_missing_root() {
        let spec = message_channel_model(Univariate::Identity, 1.0, 0.1).unwrap();
        let cfg = RouteCConfig {
            target: 2,
            source: 0,
            search: ClampSearch::Interval { lo: 50.0, hi: 60.0 },
            blocks: 10,
            seed: 1,
            tolerance: 1e-9,
        };
        let blocks = identify_message_route_c(&spec, &cfg).unwrap();
        assert!(blocks.iter().all(|b| b.status == BlockStatus::NoMatch));
    }
}
