//! Experiment analogues on the layered tanh-synapse network.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use poscm::models::layered::{conductance_regime, fit_sigmoid, simulate_layered, Simulation};
use poscm::models::LayeredNetSpec;
use poscm::stats::{ks_test, median_heuristic, mmd2, mmd_permutation_test, scalar_rows, steady_state_effect, EmpiricalLaw};
use poscm::rng::derive_seed;
use poscm::Regime;

use super::RunError;
use crate::catalog::ModelFile;
use crate::config::ProtocolConfig;
use crate::record::{num, Check, Table};

fn layered_model(cfg: &ProtocolConfig) -> Result<LayeredNetSpec, RunError> {
    let Some(path) = cfg.model_path() else {
        return Ok(LayeredNetSpec::retina());
    };
    ModelFile::load(&path)?
        .layered()
        .ok_or_else(|| RunError::invalid(format!("{} is not a layered network", path.display())))
}

fn population(spec: &LayeredNetSpec, name: &str) -> Result<usize, RunError> {
    spec.layer_index(name).ok_or_else(|| RunError::invalid(format!("no population {name}")))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub t_ms: f64,
    pub dt: f64,
    /// Trailing fraction of a trace averaged for steady-state readouts.
    pub window: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self { t_ms: 200.0, dt: 0.1, window: 0.5 }
    }
}

fn simulate(spec: &LayeredNetSpec, seed: u64, regime: &Regime, sim: &SimParams) -> Result<Simulation, RunError> {
    let draw = spec.draw(seed, 0)?;
    Ok(simulate_layered(spec, &draw, regime, sim.t_ms, sim.dt)?)
}

fn steady_mean(samples: &[f64], window: f64) -> f64 {
    let start = ((samples.len() as f64) * (1.0 - window)).floor() as usize;
    let tail = &samples[start.min(samples.len() - 1)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Steady-state `intervened - observational` per readout cell.
fn delta_v(obs: &Simulation, int: &Simulation, cells: std::ops::Range<usize>, window: f64) -> Result<Vec<f64>, RunError> {
    cells
        .map(|c| Ok(steady_state_effect(&int.traces[c].samples, &obs.traces[c].samples, window)?))
        .collect()
}

fn clamp_regimes(cells: &[usize], values: &[f64], prefix: &str) -> Result<Vec<Regime>, RunError> {
    values
        .iter()
        .map(|v| {
            let assignment: Vec<(usize, f64)> = cells.iter().map(|c| (*c, *v)).collect();
            Ok(Regime::do_values(format!("{prefix}{v}"), &assignment)?)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Exp1Params {
    /// Population whose types are swapped.
    pub population: String,
    pub swap: [usize; 2],
    pub clamp_population: String,
    pub clamp_cell: usize,
    pub clamp_values: Vec<f64>,
    pub readout: String,
    pub ks_alpha: f64,
    #[serde(flatten)]
    pub sim: SimParams,
}

impl Default for Exp1Params {
    fn default() -> Self {
        Self {
            population: "BC".into(),
            swap: [0, 1],
            clamp_population: "PR".into(),
            clamp_cell: 0,
            clamp_values: vec![-60.0, -50.0, -40.0, -30.0],
            readout: "BC".into(),
            ks_alpha: 0.05,
            sim: SimParams::default(),
        }
    }
}

/// Regimes from the config, or the observational world plus single-cell clamps.
fn exp1_regimes(cfg: &ProtocolConfig, spec: &LayeredNetSpec, p: &Exp1Params) -> Result<Vec<Regime>, RunError> {
    if !cfg.regimes.is_empty() {
        return Ok(cfg.regimes()?);
    }
    let pop = population(spec, &p.clamp_population)?;
    let cell = spec.cells(pop).nth(p.clamp_cell).ok_or_else(|| RunError::invalid(format!("clamp cell {}", p.clamp_cell)))?;
    let mut out = vec![Regime::observational()];
    out.extend(clamp_regimes(&[cell], &p.clamp_values, &format!("clamp {}[{}]=", p.clamp_population, p.clamp_cell))?);
    Ok(out)
}

/// Type-swapped twin: KS tests of steady-state potentials with types hidden
/// and, per type label, with types observed. Both models run on the same draws.
pub fn run_exp1(cfg: &ProtocolConfig) -> Result<(Vec<Table>, Vec<Check>), RunError> {
    let p: Exp1Params = cfg.params()?;
    let spec = layered_model(cfg)?;
    let pop = population(&spec, &p.population)?;
    let twin = spec.type_swapped_twin(pop, p.swap[0], p.swap[1])?;
    let readout = population(&spec, &p.readout)?;
    let regimes = exp1_regimes(cfg, &spec, &p)?;
    let labels = spec.layers[readout].types.clone();

    // Per regime: (model, twin) samples of (type, steady potential).
    type Sample = Vec<(usize, f64)>;
    let per_seed: Vec<Vec<(Sample, Sample)>> = cfg
        .seeds
        .par_iter()
        .map(|seed| {
            regimes
                .iter()
                .map(|r| {
                    let read = |m: &LayeredNetSpec| -> Result<Sample, RunError> {
                        let sim = simulate(m, *seed, r, &p.sim)?;
                        Ok(spec.cells(readout).map(|c| (sim.network.types[c], steady_mean(&sim.traces[c].samples, p.sim.window))).collect())
                    };
                    Ok((read(&spec)?, read(&twin)?))
                })
                .collect::<Result<Vec<_>, RunError>>()
        })
        .collect::<Result<_, _>>()?;

    let mut table = Table::new("exp1_ks", &["regime", "observation", "statistic", "p_value", "n_model", "n_twin"]).series();
    let (mut latent_ok, mut observed_reject) = (true, false);
    for (k, regime) in regimes.iter().enumerate() {
        let pooled = |side: usize, label: Option<usize>| -> Vec<f64> {
            per_seed
                .iter()
                .flat_map(|s| if side == 0 { &s[k].0 } else { &s[k].1 })
                .filter(|(t, _)| label.is_none_or(|l| *t == l))
                .map(|(_, v)| *v)
                .collect()
        };
        let mut row = |observation: String, a: Vec<f64>, b: Vec<f64>| -> Result<Option<f64>, RunError> {
            if a.is_empty() || b.is_empty() {
                return Ok(None);
            }
            let (na, nb) = (a.len(), b.len());
            let r = ks_test(&EmpiricalLaw::scalar(a)?, &EmpiricalLaw::scalar(b)?)?;
            table.push(vec![regime.label.clone(), observation, num(r.statistic), num(r.p_value), na.to_string(), nb.to_string()]);
            Ok(Some(r.p_value))
        };
        if let Some(pv) = row("beta-latent".into(), pooled(0, None), pooled(1, None))? {
            latent_ok &= pv > p.ks_alpha;
        }
        for (l, name) in labels.iter().enumerate() {
            if let Some(pv) = row(format!("beta-observed:{name}"), pooled(0, Some(l)), pooled(1, Some(l)))? {
                observed_reject |= pv < p.ks_alpha;
            }
        }
    }
    let checks = vec![
        Check::new("beta-latent-indistinguishable", latent_ok, format!("every beta-latent KS p > {}", p.ks_alpha)),
        Check::new("beta-observed-distinguishes", observed_reject, format!("some beta-observed KS p < {}", p.ks_alpha)),
    ];
    Ok((vec![table], checks))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Exp2Params {
    pub pre: String,
    pub post: String,
    pub block: f64,
    /// Rescale the surviving conductances to keep `p g` fixed.
    pub calibrate: bool,
    pub clamp_cell: usize,
    pub node_values: Vec<f64>,
    pub g_test: Vec<f64>,
    pub readout: String,
    /// Permutations for MMD p-values; 0 skips them.
    pub permutations: usize,
    pub ratio_threshold: f64,
    #[serde(flatten)]
    pub sim: SimParams,
}

impl Default for Exp2Params {
    fn default() -> Self {
        Self {
            pre: "PR".into(),
            post: "BC".into(),
            block: 0.4,
            calibrate: true,
            clamp_cell: 0,
            node_values: vec![-60.0, -50.0, -40.0, -30.0],
            g_test: vec![0.001, 0.002, 0.004, 0.008],
            readout: "BC".into(),
            permutations: 0,
            ratio_threshold: 2.0,
            sim: SimParams::default(),
        }
    }
}

/// Density/strength confounding: MMD between the pair's readout `Delta V`
/// under node clamps and under conductance replacement. The steady potential
/// itself is compared as well (`level_*` columns).
pub fn run_exp2(cfg: &ProtocolConfig) -> Result<(Vec<Table>, Vec<Check>), RunError> {
    let p: Exp2Params = cfg.params()?;
    let spec = layered_model(cfg)?;
    let (pre, post, readout) = (population(&spec, &p.pre)?, population(&spec, &p.post)?, population(&spec, &p.readout)?);
    let (m, mut m2) = spec.calibrated_density_pair(pre, post, p.block)?;
    if !p.calibrate {
        let idx = spec.connection_index(pre, post).expect("pair construction checked the connection");
        m2.connections[idx].synapse = spec.connections[idx].synapse.clone();
    }
    let cell = spec.cells(pre).nth(p.clamp_cell).ok_or_else(|| RunError::invalid(format!("clamp cell {}", p.clamp_cell)))?;
    let mut regimes: Vec<(&str, Regime)> = clamp_regimes(&[cell], &p.node_values, &format!("node {}[{}]=", p.pre, p.clamp_cell))?
        .into_iter()
        .map(|r| ("node", r))
        .collect();
    for g in &p.g_test {
        regimes.push(("edge", conductance_regime(&spec, pre, post, *g, format!("edge g={g}"))?));
    }

    // Per seed and regime: readout Delta V and steady potential for both models.
    type Readout = (Vec<f64>, Vec<f64>);
    let per_seed: Vec<Vec<(Readout, Readout)>> = cfg
        .seeds
        .par_iter()
        .map(|seed| {
            let run = |model: &LayeredNetSpec| -> Result<Vec<Readout>, RunError> {
                let obs = simulate(model, *seed, &Regime::observational(), &p.sim)?;
                regimes
                    .iter()
                    .map(|(_, r)| {
                        let int = simulate(model, *seed, r, &p.sim)?;
                        let level = spec.cells(readout).map(|c| steady_mean(&int.traces[c].samples, p.sim.window)).collect();
                        Ok((delta_v(&obs, &int, spec.cells(readout), p.sim.window)?, level))
                    })
                    .collect()
            };
            let (a, b) = (run(&m)?, run(&m2)?);
            Ok(a.into_iter().zip(b).collect())
        })
        .collect::<Result<_, RunError>>()?;

    let compare = |x: Vec<f64>, y: Vec<f64>, key: u64| -> Result<(f64, f64, String), RunError> {
        let (x, y) = (scalar_rows(&x), scalar_rows(&y));
        let pooled: Vec<Vec<f64>> = x.iter().chain(&y).cloned().collect();
        let sigma = median_heuristic(&pooled)?;
        let p_value = if p.permutations > 0 {
            num(mmd_permutation_test(&x, &y, sigma, p.permutations, derive_seed(cfg.seeds[0], key))?.p_value)
        } else {
            String::new()
        };
        Ok((mmd2(&x, &y, sigma)?, sigma, p_value))
    };
    let mut table =
        Table::new("exp2_mmd", &["regime", "kind", "mmd2", "sigma", "p_value", "level_mmd2", "level_p_value"]).series();
    let (mut node, mut edge) = (Vec::new(), Vec::new());
    for (k, (kind, regime)) in regimes.iter().enumerate() {
        let pick = |f: &dyn Fn(&(Readout, Readout)) -> &Vec<f64>| -> Vec<f64> { per_seed.iter().flat_map(|s| f(&s[k]).iter().copied()).collect() };
        let (d, sigma, p_dv) = compare(pick(&|r| &r.0 .0), pick(&|r| &r.1 .0), 2 * k as u64)?;
        let (level, _, p_level) = compare(pick(&|r| &r.0 .1), pick(&|r| &r.1 .1), 2 * k as u64 + 1)?;
        table.push(vec![regime.label.clone(), kind.to_string(), num(d), num(sigma), p_dv, num(level), p_level]);
        if *kind == "node" { &mut node } else { &mut edge }.push(d);
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let (mn, me) = (mean(&node), mean(&edge));
    let ratio = if mn > 0.0 { me / mn } else { f64::INFINITY };
    let mut summary = Table::new("exp2_summary", &["mean_node_mmd2", "mean_edge_mmd2", "ratio"]);
    summary.push(vec![num(mn), num(me), num(ratio)]);
    let checks = vec![
        Check::new("edge-exceeds-node", me > mn, format!("mean MMD^2 edge {me:.4} vs node {mn:.4}")),
        Check::new("edge-node-ratio", ratio > p.ratio_threshold, format!("ratio {ratio:.3} > {}", p.ratio_threshold)),
    ];
    Ok((vec![table, summary], checks))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Exp3Params {
    pub eccentricities: Vec<f64>,
    /// Population size scales as `(reference / e)^exponent[layer]`.
    pub exponents: Vec<f64>,
    pub reference: f64,
    pub clamp_population: String,
    pub clamp_values: Vec<f64>,
    pub readout: String,
    /// Expected transition; defaults to the threshold of the clamp -> readout synapse.
    pub v_thr: Option<f64>,
    pub tolerance_mv: f64,
    pub min_width: f64,
    #[serde(flatten)]
    pub sim: SimParams,
}

impl Default for Exp3Params {
    fn default() -> Self {
        Self {
            eccentricities: vec![-1.2, -1.5, -2.0, -2.5, -3.0, -3.5],
            exponents: vec![0.5, 1.0, 1.0, 1.0, 1.5],
            reference: -1.2,
            clamp_population: "BC".into(),
            clamp_values: vec![-70.0, -60.0, -50.0, -40.0, -30.0, -20.0],
            readout: "RGC".into(),
            v_thr: None,
            tolerance_mv: 5.0,
            min_width: 0.5,
            sim: SimParams::default(),
        }
    }
}

/// Context sweep: composition per eccentricity and the clamp -> readout
/// transfer curve, with a sigmoid fit of the curve averaged over the sweep.
pub fn run_exp3(cfg: &ProtocolConfig) -> Result<(Vec<Table>, Vec<Check>), RunError> {
    let p: Exp3Params = cfg.params()?;
    let base = layered_model(cfg)?;
    if p.exponents.len() != base.layers.len() {
        return Err(RunError::invalid(format!("{} exponents for {} populations", p.exponents.len(), base.layers.len())));
    }
    if p.eccentricities.is_empty() || p.clamp_values.len() < 4 {
        return Err(RunError::invalid("need eccentricities and at least four clamp values".into()));
    }
    let (clamp_pop, readout) = (population(&base, &p.clamp_population)?, population(&base, &p.readout)?);
    let v_thr = match p.v_thr {
        Some(v) => v,
        None => {
            let c = base
                .connection_index(clamp_pop, readout)
                .ok_or_else(|| RunError::invalid(format!("no connection {} -> {}", p.clamp_population, p.readout)))?;
            base.connections[c].synapse[0].v_thr
        }
    };
    let specs: Vec<LayeredNetSpec> = p
        .eccentricities
        .iter()
        .map(|e| {
            let scale: Vec<f64> = p.exponents.iter().map(|x| (p.reference / e).powf(*x)).collect();
            base.scaled(&scale)
        })
        .collect::<Result<_, _>>()?;

    let jobs: Vec<(usize, u64)> = (0..specs.len()).flat_map(|k| cfg.seeds.iter().map(move |s| (k, *s))).collect();
    // Per (eccentricity, seed): type counts per population and the mean readout Delta V per clamp.
    let results: Vec<(Vec<Vec<usize>>, Vec<f64>)> = jobs
        .par_iter()
        .map(|(k, seed)| {
            let spec = &specs[*k];
            let cells: Vec<usize> = spec.cells(clamp_pop).collect();
            let obs = simulate(spec, *seed, &Regime::observational(), &p.sim)?;
            let counts = (0..spec.layers.len()).map(|l| obs.network.type_counts(l, spec.layers[l].types.len())).collect();
            let curve = clamp_regimes(&cells, &p.clamp_values, "clamp ")?
                .iter()
                .map(|r| {
                    let dv = delta_v(&obs, &simulate(spec, *seed, r, &p.sim)?, spec.cells(readout), p.sim.window)?;
                    Ok(dv.iter().sum::<f64>() / dv.len() as f64)
                })
                .collect::<Result<Vec<f64>, RunError>>()?;
            Ok((counts, curve))
        })
        .collect::<Result<_, RunError>>()?;

    let seeds = cfg.seeds.len();
    let mut composition = Table::new("exp3_composition", &["eccentricity", "population", "type", "mean_count", "fraction"]).series();
    let mut transfer = Table::new("exp3_transfer", &["eccentricity", "clamp_mv", "mean_dv"]).series();
    let mut pooled = vec![0.0; p.clamp_values.len()];
    let mut monotone = true;
    for (k, e) in p.eccentricities.iter().enumerate() {
        let rows = &results[k * seeds..(k + 1) * seeds];
        for (l, layer) in specs[k].layers.iter().enumerate() {
            let total: usize = rows.iter().map(|r| r.0[l].iter().sum::<usize>()).sum();
            for (t, name) in layer.types.iter().enumerate() {
                let count: usize = rows.iter().map(|r| r.0[l][t]).sum();
                composition.push(vec![
                    num(*e),
                    layer.name.clone(),
                    name.clone(),
                    num(count as f64 / seeds as f64),
                    num(count as f64 / total.max(1) as f64),
                ]);
            }
        }
        let curve: Vec<f64> = (0..p.clamp_values.len()).map(|j| rows.iter().map(|r| r.1[j]).sum::<f64>() / seeds as f64).collect();
        monotone &= curve.windows(2).all(|w| w[1] >= w[0] - 1e-9);
        for (j, (v, dv)) in p.clamp_values.iter().zip(&curve).enumerate() {
            transfer.push(vec![num(*e), num(*v), num(*dv)]);
            pooled[j] += dv / p.eccentricities.len() as f64;
        }
    }
    let fit = fit_sigmoid(&p.clamp_values, &pooled, p.min_width)?;
    let mut fit_table = Table::new("exp3_sigmoid", &["lo", "hi", "midpoint_mv", "width_mv", "sse", "v_thr"]);
    fit_table.push(vec![num(fit.lo), num(fit.hi), num(fit.mid), num(fit.width), num(fit.sse), num(v_thr)]);
    let checks = vec![
        Check::new("transfer-monotone", monotone, "mean readout Delta V nondecreasing in the clamp at every eccentricity"),
        Check::new(
            "sigmoid-midpoint",
            (fit.mid - v_thr).abs() <= p.tolerance_mv,
            format!("midpoint {:.2} mV vs threshold {v_thr} mV (tolerance {} mV)", fit.mid, p.tolerance_mv),
        ),
    ];
    Ok((vec![composition, transfer, fit_table], checks))
}
