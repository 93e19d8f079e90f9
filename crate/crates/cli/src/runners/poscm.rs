//! Runners on POSCM specs: probing, message recovery, equivalence and IISC.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use poscm::identify::{
    check_equivalence, identify_message_route_ab, identify_message_route_c, probe_structure, BlockStatus, ClampSearch, Overall,
    ProbeProtocol, Route, RouteAbConfig, RouteCConfig,
};
use poscm::models::zoo::effective_binary_instance;
use poscm::rng::{derive_seed, tag};
use poscm::{
    iisc_detect, sample_exogenous, supervising_measure, ChannelNoise, InstanceHandle, Mechanism, MeasurementModel, PoscmSpec, Regime,
};

use super::RunError;
use crate::catalog::{ModelFile, TwinFile};
use crate::config::ProtocolConfig;
use crate::record::{num, Check, Table};

fn poscm_model(cfg: &ProtocolConfig, default: ModelFile) -> Result<PoscmSpec, RunError> {
    let file = match cfg.model_path() {
        Some(path) => ModelFile::load(&path)?,
        None => default,
    };
    Ok(file.poscm()?)
}

fn n_per(cfg: &ProtocolConfig, default: usize) -> usize {
    if cfg.n_per == 0 {
        default
    } else {
        cfg.n_per
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeParams {
    /// Per-node value grids; binary `{0, 1}` when absent.
    pub value_grid: Option<Vec<Vec<f64>>>,
    /// Resample each seed's instance until every realized edge has at least
    /// this effect (random binary models only).
    pub min_effect: Option<f64>,
    pub min_accuracy: f64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        Self { value_grid: None, min_effect: None, min_accuracy: 0.95 }
    }
}

/// Structure readout on one frozen instance per seed, scored against the
/// instance's realized adjacency.
pub fn run_probe(cfg: &ProtocolConfig) -> Result<(Vec<Table>, Vec<Check>), RunError> {
    let p: ProbeParams = cfg.params()?;
    let spec = poscm_model(cfg, ModelFile::RandomBinary { n: 5 })?;
    let probes = n_per(cfg, 500);
    let rows: Vec<Vec<String>> = cfg
        .seeds
        .par_iter()
        .map(|seed| {
            let (instance, replicate) = match p.min_effect {
                Some(e) => effective_binary_instance(&spec, *seed, 0, e)?,
                None => (InstanceHandle::from_draw(&spec, Arc::new(sample_exogenous(&spec, *seed, 0)))?, 0),
            };
            let mut protocol = ProbeProtocol::binary(spec.n(), probes, cfg.alpha, derive_seed(*seed, tag::PROBE));
            if let Some(g) = &p.value_grid {
                protocol.value_grid = g.clone();
            }
            let readout = probe_structure(&instance, &protocol)?;
            let fmt = |e: Vec<(usize, usize)>| e.iter().map(|(j, i)| format!("{j}->{i}")).collect::<Vec<_>>().join(" ");
            let inconclusive = readout.dyads.iter().filter(|d| d.inconclusive).count();
            Ok(vec![
                seed.to_string(),
                replicate.to_string(),
                fmt(instance.adjacency.edges()),
                fmt(readout.adjacency.edges()),
                (readout.adjacency == instance.adjacency).to_string(),
                readout.tests.to_string(),
                inconclusive.to_string(),
            ])
        })
        .collect::<Result<_, RunError>>()?;
    let mut table = Table::new("probe", &["seed", "replicate", "true_edges", "found_edges", "exact", "tests", "inconclusive"]);
    let exact = rows.iter().filter(|r| r[4] == "true").count();
    for r in rows {
        table.push(r);
    }
    let accuracy = exact as f64 / cfg.seeds.len() as f64;
    let check = Check::new(
        "structure-readout",
        accuracy >= p.min_accuracy,
        format!("{exact}/{} instances recovered exactly (required fraction {})", cfg.seeds.len(), p.min_accuracy),
    );
    Ok((vec![table], vec![check]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RouteChoice {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MessageParams {
    pub route: RouteChoice,
    pub target: usize,
    pub source: usize,
    pub v_grid: Vec<f64>,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    pub spacing: f64,
    /// Values held on the other potential parents of the target.
    pub others: Vec<(usize, f64)>,
    /// Route A readout grids per node; binary when absent.
    pub probe_grid: Option<Vec<Vec<f64>>>,
    pub probes: usize,
    /// Route C: replay blocks and match tolerance.
    pub blocks: usize,
    pub tolerance: f64,
    /// Route C searches `[clamp_lo, clamp_hi]` by bisection unless set.
    pub grid_search: bool,
}

impl Default for MessageParams {
    fn default() -> Self {
        Self {
            route: RouteChoice::A,
            target: 2,
            source: 0,
            v_grid: vec![-1.5, -0.5, 0.0, 0.7, 1.5],
            clamp_lo: -4.0,
            clamp_hi: 4.0,
            spacing: 0.05,
            others: vec![(1, 0.0)],
            probe_grid: Some(vec![vec![-1.0, 1.0], vec![0.0], vec![0.0]]),
            probes: 40,
            blocks: 200,
            tolerance: 1e-9,
            grid_search: false,
        }
    }
}

/// True per-source message of a context-free message-form mechanism.
fn true_message(spec: &PoscmSpec, target: usize, source: usize) -> Option<impl Fn(f64) -> Vec<f64>> {
    match spec.gamma[target].assign(0.0, spec.potential_parents(target), &[]).ok()? {
        Mechanism::Messages(m) => Some(move |v| (m.h)(source, v)),
        Mechanism::Direct(_) => None,
    }
}

/// Message recovery by Route A/B matching or Route C replay, one run per seed.
pub fn run_identify_messages(cfg: &ProtocolConfig) -> Result<(Vec<Table>, Vec<Check>), RunError> {
    let p: MessageParams = cfg.params()?;
    let spec = poscm_model(cfg, ModelFile::MessageChannel { channel: poscm::messages::Univariate::Identity, edge_prob: 0.7, noise_sd: 0.1 })?;
    if !(p.spacing > 0.0 && p.clamp_hi > p.clamp_lo) {
        return Err(RunError::invalid(format!("clamp grid [{}, {}] step {}", p.clamp_lo, p.clamp_hi, p.spacing)));
    }
    let steps = ((p.clamp_hi - p.clamp_lo) / p.spacing).round() as usize;
    let clamp_grid: Vec<Vec<f64>> = (0..=steps).map(|k| vec![p.clamp_lo + p.spacing * k as f64]).collect();
    let truth = true_message(&spec, p.target, p.source);
    let err_of = |v: f64, est: &[f64]| truth.as_ref().map(|h| h(v).iter().zip(est).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    let mut max_err = 0.0f64;
    let mut flagged = 0usize;
    let mut table;
    match p.route {
        RouteChoice::A | RouteChoice::B => {
            table = Table::new("messages", &["seed", "v", "estimate", "residual", "p_value", "ambiguous", "error"]).series();
            for seed in &cfg.seeds {
                let protocol = p.probe_grid.as_ref().map(|g| {
                    let mut pr = ProbeProtocol::binary(spec.n(), p.probes, 1e-3, derive_seed(*seed, tag::PROBE));
                    pr.value_grid = g.clone();
                    pr
                });
                let rc = RouteAbConfig {
                    route: if p.route == RouteChoice::A { Route::A } else { Route::B },
                    target: p.target,
                    source: p.source,
                    v_grid: p.v_grid.clone(),
                    clamp_grid: clamp_grid.clone(),
                    others: p.others.clone(),
                    n_per: n_per(cfg, 2000),
                    seed: *seed,
                    protocol: if p.route == RouteChoice::A { protocol } else { None },
                };
                let rec = identify_message_route_ab(&spec, &rc)?;
                for m in &rec.matches {
                    let e = err_of(m.v, &m.estimate);
                    max_err = max_err.max(e.unwrap_or(0.0));
                    flagged += usize::from(m.ambiguous);
                    table.push(vec![
                        seed.to_string(),
                        num(m.v),
                        num(m.estimate[0]),
                        num(m.residual),
                        num(m.p_value),
                        m.ambiguous.to_string(),
                        e.map(num).unwrap_or_default(),
                    ]);
                }
            }
        }
        RouteChoice::C => {
            table = Table::new("messages", &["seed", "replicate", "v_source", "baseline", "status", "estimate", "error"]).series();
            let search = if p.grid_search {
                ClampSearch::Grid { clamps: clamp_grid.clone() }
            } else {
                ClampSearch::Interval { lo: p.clamp_lo, hi: p.clamp_hi }
            };
            for seed in &cfg.seeds {
                let rc = RouteCConfig { target: p.target, source: p.source, search: search.clone(), blocks: p.blocks, seed: *seed, tolerance: p.tolerance };
                for b in identify_message_route_c(&spec, &rc)? {
                    let e = b.estimate.as_ref().and_then(|est| err_of(b.v_source, est));
                    max_err = max_err.max(e.unwrap_or(0.0));
                    flagged += usize::from(matches!(b.status, BlockStatus::NoMatch | BlockStatus::MultipleMatches));
                    let status = serde_json::to_value(b.status).expect("status serializes");
                    table.push(vec![
                        seed.to_string(),
                        b.replicate.to_string(),
                        num(b.v_source),
                        num(b.baseline),
                        status.as_str().unwrap_or_default().to_string(),
                        b.estimate.as_ref().map(|x| num(x[0])).unwrap_or_default(),
                        e.map(num).unwrap_or_default(),
                    ]);
                }
            }
        }
    }
    let bound = if p.route == RouteChoice::C { p.tolerance } else { p.spacing };
    let mut checks = vec![Check::new("no-flagged-matches", flagged == 0, format!("{flagged} ambiguous or unmatched"))];
    if truth.is_some() {
        checks.push(Check::new("message-error", max_err <= bound, format!("max error {max_err:e} <= {bound:e}")));
    }
    Ok((vec![table], checks))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Indistinguishable,
    Distinguished,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivParams {
    pub twin: TwinFile,
    #[serde(default)]
    pub expect: Option<Expectation>,
    /// Runs allowed to disagree with `expect`.
    #[serde(default)]
    pub max_mismatches: usize,
    #[serde(default)]
    pub observe_contexts: bool,
    #[serde(default)]
    pub observe_adjacency: bool,
}

/// `checkEquivalence` of a model and its twin, one independent run per seed.
pub fn run_equiv(cfg: &ProtocolConfig) -> Result<(Vec<Table>, Vec<Check>), RunError> {
    let p: EquivParams = cfg.params()?;
    let base = poscm_model(cfg, ModelFile::KernelModel(Default::default()))?;
    let (a, b) = p.twin.build(&base)?;
    let family = if cfg.regimes.is_empty() { vec![Regime::observational()] } else { cfg.regimes()? };
    let om = MeasurementModel {
        value: Some(ChannelNoise::Identity),
        beta: p.observe_contexts.then_some(ChannelNoise::Identity),
        adjacency: p.observe_adjacency.then_some(ChannelNoise::Identity),
    };
    let n = n_per(cfg, 10_000);
    let verdicts = cfg
        .seeds
        .par_iter()
        .map(|seed| check_equivalence(&a, &b, &family, &om, n, cfg.alpha, *seed))
        .collect::<Result<Vec<_>, _>>()?;
    let mut tests = Table::new("equiv_tests", &["seed", "regime", "channel", "node", "source", "statistic", "p_value", "corrected_p"]);
    let mut overall = Table::new("equiv_verdicts", &["seed", "verdict", "regime", "channel", "node", "min_corrected_p"]);
    let mut mismatches = 0;
    for (seed, v) in cfg.seeds.iter().zip(&verdicts) {
        for t in &v.tests {
            let channel = serde_json::to_value(t.channel).expect("channel serializes");
            tests.push(vec![
                seed.to_string(),
                t.regime.clone(),
                channel.as_str().unwrap_or_default().to_string(),
                t.node.to_string(),
                t.source.map(|s| s.to_string()).unwrap_or_default(),
                num(t.result.statistic),
                num(t.result.p_value),
                num(t.corrected_p),
            ]);
        }
        let row = match &v.overall {
            Overall::Indistinguishable => vec!["indistinguishable".into(), String::new(), String::new(), String::new()],
            Overall::Distinguished { regime, channel, node, .. } => {
                let c = serde_json::to_value(channel).expect("channel serializes");
                vec!["distinguished".into(), regime.clone(), c.as_str().unwrap_or_default().to_string(), node.to_string()]
            }
        };
        let mut full = vec![seed.to_string()];
        full.extend(row);
        full.push(num(v.min_corrected_p()));
        overall.push(full);
        if let Some(e) = p.expect {
            mismatches += usize::from(v.distinguished() != (e == Expectation::Distinguished));
        }
    }
    let mut checks = Vec::new();
    if let Some(e) = p.expect {
        checks.push(Check::new(
            "equivalence-verdict",
            mismatches <= p.max_mismatches,
            format!("{mismatches} of {} runs differ from {e:?} (allowed {})", cfg.seeds.len(), p.max_mismatches),
        ));
    }
    Ok((vec![tests, overall], checks))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IiscParams {
    /// Sources whose supervising measures are compared; all nodes when absent.
    pub sources: Option<Vec<usize>>,
}

/// Supervising measures under each regime against the observational ones, on
/// shared draws. Value-level regimes must leave every measure unchanged.
pub fn run_iisc(cfg: &ProtocolConfig) -> Result<(Vec<Table>, Vec<Check>), RunError> {
    let p: IiscParams = cfg.params()?;
    let spec = poscm_model(cfg, ModelFile::KernelModel(Default::default()))?;
    if cfg.regimes.is_empty() {
        return Err(RunError::invalid("iisc needs at least one regime".into()));
    }
    let regimes = cfg.regimes()?;
    let sources = p.sources.clone().unwrap_or_else(|| spec.order()[..spec.n() - 1].to_vec());
    let n = n_per(cfg, 10_000);
    let mut table = Table::new("iisc", &["seed", "regime", "source", "changed", "statistic", "p_value"]);
    let mut value_level_changed = 0;
    for seed in &cfg.seeds {
        for j in &sources {
            let base = supervising_measure(&spec, &Regime::observational(), *j, n, *seed)?;
            for r in &regimes {
                let res = iisc_detect(&base, &supervising_measure(&spec, r, *j, n, *seed)?, cfg.alpha)?;
                value_level_changed += usize::from(r.is_value_level() && res.changed);
                table.push(vec![seed.to_string(), r.label.clone(), j.to_string(), res.changed.to_string(), num(res.statistic), num(res.p_value)]);
            }
        }
    }
    let check = Check::new(
        "value-level-no-iisc",
        value_level_changed == 0,
        format!("{value_level_changed} value-level regimes changed a supervising measure"),
    );
    Ok((vec![table], vec![check]))
}
