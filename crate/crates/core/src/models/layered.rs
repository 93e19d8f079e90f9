//! Layered tanh-synapse network: a lightweight stand-in for a retinal patch.
//!
//! Cells are POSCM nodes ordered layer by layer. A cell's context is its type
//! label; edges form with a probability set by the layer pair and the
//! presynaptic type, and synaptic parameters are set by the layer pair and the
//! postsynaptic type. Phase II integrates conductance-based point neurons
//! with forward Euler.
//!
//! Units: mV, ms, uS (umho), nA, nF. Stimulus amplitudes are given in pA.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{PoscmError, Result};
use crate::exogenous::{sample_exogenous, ExogenousDraw};
use crate::generate::{phase_one, Adjacency};
use crate::interventions::{Intervention, Regime};
use crate::messages::{MessageMechanism, MessageReplacement};
use crate::rng::{tag, KeyedStream};
use crate::spec::{ContextMechanism, MechanismOperator, PoscmSpec, StructureKernel};

/// Floor on the kinetics denominator `1 - s_inf`.
pub const KINETICS_FLOOR: f64 = 1e-3;
/// Simulation is aborted once any potential leaves `[-500, 500]` mV.
pub const INSTABILITY_BOUND: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynapseParams {
    pub g_max: f64,
    pub v_thr: f64,
    pub v_slope: f64,
    pub tau_syn: f64,
    pub e_rev: f64,
    pub sign_inverting: bool,
}

impl Default for SynapseParams {
    fn default() -> Self {
        Self { g_max: 0.00256, v_thr: -45.0, v_slope: 10.0, tau_syn: 10.0, e_rev: 0.0, sign_inverting: false }
    }
}

impl SynapseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_slope > 0.0 && self.tau_syn > 0.0) || !self.g_max.is_finite() || !self.v_thr.is_finite() {
            return Err(PoscmError::InvalidParameter(format!("synapse parameters {self:?}")));
        }
        Ok(())
    }

    /// Steady-state activation, rectified: `max(0, tanh((v_pre - v_thr) / v_slope))`.
    pub fn activation(&self, v_pre: f64) -> f64 {
        ((v_pre - self.v_thr) / self.v_slope).tanh().max(0.0)
    }
}

/// One forward-Euler step of `ds/dt = (s_inf - s) / (tau (1 - s_inf))`.
/// The step never crosses `s_inf`; near saturation the rate exceeds `1 / dt`
/// and an unlimited step would oscillate with growing amplitude.
pub fn synapse_step(s: f64, v_pre: f64, p: &SynapseParams, dt: f64) -> f64 {
    let s_inf = p.activation(v_pre);
    let next = s + dt * (s_inf - s) / (p.tau_syn * (1.0 - s_inf).max(KINETICS_FLOOR));
    if (next - s_inf) * (s - s_inf) < 0.0 {
        s_inf
    } else {
        next
    }
}

/// Synaptic term entering `C dV/dt`: `-g s (V - E)` for sign-preserving
/// synapses and `+g s (V - E)` for sign-inverting ones.
pub fn synaptic_current(s: f64, v_post: f64, p: &SynapseParams) -> f64 {
    let sign = if p.sign_inverting { 1.0 } else { -1.0 };
    sign * p.g_max * s * (v_post - p.e_rev)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Soma {
    pub g_leak: f64,
    pub e_leak: f64,
    pub capacitance: f64,
}

impl Soma {
    pub fn time_constant(&self) -> f64 {
        self.capacitance / self.g_leak
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub name: String,
    pub size: usize,
    pub types: Vec<String>,
    pub mix: Vec<f64>,
    /// Permutation applied to the sampled type index; the identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relabel: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soma: Option<Soma>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub pre: usize,
    pub post: usize,
    /// Edge probability per presynaptic type.
    pub prob: Vec<f64>,
    /// Synapse parameters per postsynaptic type.
    pub synapse: Vec<SynapseParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub amplitude_pa: f64,
    pub population: usize,
}

/// Integrate-and-fire readout: on reaching `threshold` the cell records
/// `peak` for one step and restarts from `reset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lif {
    pub population: usize,
    pub threshold: f64,
    pub peak: f64,
    pub reset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredNetSpec {
    pub layers: Vec<Population>,
    pub connections: Vec<Connection>,
    pub soma: Soma,
    pub stimulus: Option<Stimulus>,
    #[serde(default)]
    pub spiking: Option<Lif>,
    /// Standard deviation (nA) of an independent per-step current on every
    /// unclamped cell; 0 disables it.
    #[serde(default)]
    pub within_layer_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub cell: usize,
    pub dt: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Synapse {
    pub pre: usize,
    pub post: usize,
    pub connection: usize,
}

/// Phase-I outcome of a layered network.
#[derive(Debug, Clone)]
pub struct Network {
    pub layer: Vec<usize>,
    pub types: Vec<usize>,
    pub adjacency: Adjacency,
    pub synapses: Vec<Synapse>,
    /// Effective parameters per synapse, after edge interventions.
    pub params: Vec<SynapseParams>,
}

impl Network {
    pub fn cells_in(&self, layer: usize) -> impl Iterator<Item = usize> + '_ {
        self.layer.iter().enumerate().filter(move |(_, l)| **l == layer).map(|(c, _)| c)
    }

    pub fn type_counts(&self, layer: usize, types: usize) -> Vec<usize> {
        let mut counts = vec![0; types];
        for c in self.cells_in(layer) {
            counts[self.types[c]] += 1;
        }
        counts
    }

    /// Sum of `g_max` over the synapses of one connection into `post`.
    pub fn total_conductance(&self, connection: usize, post: usize) -> f64 {
        self.synapses
            .iter()
            .zip(&self.params)
            .filter(|(s, _)| s.connection == connection && s.post == post)
            .map(|(_, p)| p.g_max)
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub network: Network,
    pub traces: Vec<Trace>,
}

impl LayeredNetSpec {
    /// A five-layer patch: PR -> HZ, PR -> BC, BC -> AC, BC -> RGC, AC -> RGC.
    /// Only photoreceptors are stimulated. ON bipolar cells receive
    /// sign-inverting synapses; all other synapses preserve sign.
    pub fn retina() -> Self {
        let pop = |name: &str, size: usize, types: &[&str], mix: &[f64]| Population {
            name: name.into(),
            size,
            types: types.iter().map(|t| t.to_string()).collect(),
            mix: mix.to_vec(),
            relabel: None,
            soma: None,
        };
        let syn = |g_max: f64, v_thr: f64, e_rev: f64, sign_inverting: bool| SynapseParams {
            g_max,
            v_thr,
            e_rev,
            sign_inverting,
            ..SynapseParams::default()
        };
        let mut bc = pop("BC", 40, &["on", "off"], &[0.5, 0.5]);
        // A large leak keeps sign-inverting input below the leak conductance.
        bc.soma = Some(Soma { g_leak: 0.1, e_leak: -60.0, capacitance: 1.0 });
        Self {
            layers: vec![
                pop("PR", 12, &["cone"], &[1.0]),
                pop("HZ", 4, &["h1"], &[1.0]),
                bc,
                pop("AC", 8, &["a"], &[1.0]),
                pop("RGC", 12, &["on", "off"], &[0.5, 0.5]),
            ],
            connections: vec![
                Connection { pre: 0, post: 1, prob: vec![0.5], synapse: vec![syn(0.00256, -45.0, 0.0, false)] },
                Connection {
                    pre: 0,
                    post: 2,
                    prob: vec![0.25],
                    synapse: vec![syn(0.00256, -40.0, 0.0, true), syn(0.00256, -42.0, 0.0, false)],
                },
                Connection { pre: 2, post: 3, prob: vec![0.3, 0.3], synapse: vec![syn(0.00256, -45.0, 0.0, false)] },
                Connection {
                    pre: 2,
                    post: 4,
                    prob: vec![0.3, 0.3],
                    synapse: vec![syn(0.00256, -45.0, 0.0, false), syn(0.00256, -45.0, 0.0, false)],
                },
                Connection {
                    pre: 3,
                    post: 4,
                    prob: vec![0.3],
                    synapse: vec![syn(0.0005, -45.0, -70.0, false), syn(0.0005, -45.0, -70.0, false)],
                },
            ],
            soma: Soma { g_leak: 0.004, e_leak: -60.0, capacitance: 0.04 },
            stimulus: Some(Stimulus { amplitude_pa: 120.0, population: 0 }),
            spiking: None,
            within_layer_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PoscmError::InvalidSpec(m));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.types.is_empty() || l.types.len() != l.mix.len() {
                return bad(format!("layer {k}: {} types, {} mixing weights", l.types.len(), l.mix.len()));
            }
            if l.mix.iter().any(|w| !(*w >= 0.0)) || l.mix.iter().sum::<f64>() <= 0.0 {
                return bad(format!("layer {k}: mixing weights {:?}", l.mix));
            }
            if let Some(r) = &l.relabel {
                let mut sorted = r.clone();
                sorted.sort_unstable();
                if sorted != (0..l.types.len()).collect::<Vec<_>>() {
                    return bad(format!("layer {k}: relabel {r:?} is not a permutation"));
                }
            }
            if let Some(s) = &l.soma {
                check_soma(s)?;
            }
        }
        check_soma(&self.soma)?;
        let nl = self.layers.len();
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.connections {
            if c.pre >= nl || c.post >= nl || c.pre >= c.post {
                return bad(format!("connection {} -> {} must go forward between existing layers", c.pre, c.post));
            }
            if !seen.insert((c.pre, c.post)) {
                return bad(format!("duplicate connection {} -> {}", c.pre, c.post));
            }
            if c.prob.len() != self.layers[c.pre].types.len() || c.synapse.len() != self.layers[c.post].types.len() {
                return bad(format!("connection {} -> {}: table sizes do not match the type counts", c.pre, c.post));
            }
            if c.prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("connection {} -> {}: probabilities {:?}", c.pre, c.post, c.prob));
            }
            for s in &c.synapse {
                s.validate()?;
            }
        }
        if let Some(s) = &self.stimulus {
            if s.population >= nl || !s.amplitude_pa.is_finite() {
                return bad(format!("stimulus {s:?}"));
            }
        }
        if let Some(l) = &self.spiking {
            if l.population >= nl || !(l.reset < l.threshold) {
                return bad(format!("spiking readout {l:?}"));
            }
        }
        if !(self.within_layer_noise >= 0.0) {
            return bad(format!("within-layer noise {}", self.within_layer_noise));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.layers.iter().map(|l| l.size).sum()
    }

    pub fn layer_of(&self) -> Vec<usize> {
        self.layers.iter().enumerate().flat_map(|(k, l)| std::iter::repeat_n(k, l.size)).collect()
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn connection_index(&self, pre: usize, post: usize) -> Option<usize> {
        self.connections.iter().position(|c| c.pre == pre && c.post == post)
    }

    /// Cell ids of layer `k`.
    pub fn cells(&self, k: usize) -> std::ops::Range<usize> {
        let start: usize = self.layers[..k].iter().map(|l| l.size).sum();
        start..start + self.layers[k].size
    }

    fn soma_of(&self, layer: usize) -> Soma {
        self.layers[layer].soma.unwrap_or(self.soma)
    }

    /// POSCM view for Phase I: one node per cell with its type as context.
    /// The view's values are the leak potentials; potentials over time come
    /// from [`simulate_layered`].
    pub fn poscm(&self) -> Result<PoscmSpec> {
        self.validate()?;
        let layer = Arc::new(self.layer_of());
        let nl = self.layers.len();
        let mut table: Vec<Option<Vec<f64>>> = vec![None; nl * nl];
        for c in &self.connections {
            table[c.pre * nl + c.post] = Some(c.prob.clone());
        }
        let lk = Arc::clone(&layer);
        let mut b = PoscmSpec::builder(self.cell_count())
            .name("layered-net")
            .all_value_domains(Domain::interval(-INSTABILITY_BOUND, INSTABILITY_BOUND)?)
            .alpha(StructureKernel::product(move |j, i, b| match &table[lk[j] * nl + lk[i]] {
                Some(p) => p[b as usize],
                None => 0.0,
            }));
        let mut contexts = Vec::with_capacity(nl);
        let mut values = Vec::with_capacity(nl);
        for (k, l) in self.layers.iter().enumerate() {
            let total: f64 = l.mix.iter().sum();
            let mut cdf: Vec<f64> = l.mix.iter().scan(0.0, |a, w| Some(*a + w / total).inspect(|v| *a = *v)).collect();
            *cdf.last_mut().unwrap() = f64::INFINITY;
            let relabel = l.relabel.clone().unwrap_or_else(|| (0..l.types.len()).collect());
            contexts.push((
                Domain::finite(l.types.clone())?,
                ContextMechanism::direct(move |_, u| relabel[cdf.iter().position(|c| u[0] < *c).unwrap()] as f64),
            ));
            let e_leak = self.soma_of(k).e_leak;
            values.push(MechanismOperator::fixed_messages(MessageMechanism::new(
                1,
                |_, _| vec![0.0],
                move |_, _| e_leak,
            )));
        }
        for (cell, k) in layer.iter().enumerate() {
            b = b
                .context_domain(cell, contexts[*k].0.clone())
                .context(cell, contexts[*k].1.clone())
                .mechanism(cell, values[*k].clone());
        }
        b.build()
    }

    pub fn draw(&self, seed: u64, replicate: u64) -> Result<ExogenousDraw> {
        Ok(sample_exogenous(&self.poscm()?, seed, replicate))
    }

    /// Phase I on `draw`: types and synapses, with edge interventions applied.
    pub fn instantiate(&self, draw: &ExogenousDraw, regime: &Regime) -> Result<Network> {
        let view = self.poscm()?;
        self.instantiate_on(&view, draw, regime)
    }

    fn instantiate_on(&self, view: &PoscmSpec, draw: &ExogenousDraw, regime: &Regime) -> Result<Network> {
        let n = view.n();
        if draw.n() != n {
            return Err(PoscmError::InvalidParameter(format!("draw for {} cells, network has {n}", draw.n())));
        }
        self.check_regime(view, regime)?;
        let p1 = phase_one(view, draw, regime)?;
        let layer = self.layer_of();
        let types: Vec<usize> = p1.beta.iter().map(|b| *b as usize).collect();
        let mut synapses = Vec::new();
        let mut params = Vec::new();
        for (pre, post) in p1.adjacency.edges() {
            let connection = self
                .connection_index(layer[pre], layer[post])
                .expect("edges only form along declared connections");
            let mut p = self.connections[connection].synapse[types[post]];
            if let Some(MessageReplacement::Clamp(m)) = regime.v_edge(pre, post) {
                p.g_max = m[0];
            }
            synapses.push(Synapse { pre, post, connection });
            params.push(p);
        }
        Ok(Network { layer, types, adjacency: p1.adjacency, synapses, params })
    }

    fn check_regime(&self, view: &PoscmSpec, regime: &Regime) -> Result<()> {
        for iv in regime.interventions() {
            match iv {
                Intervention::BetaNode { node, value } => {
                    view.check_node(*node)?;
                    if !view.context_domain[*node].contains(*value) {
                        return Err(PoscmError::InvalidParameter(format!("type {value} for cell {node}")));
                    }
                }
                Intervention::VNode { node, value } => {
                    view.check_node(*node)?;
                    if !(value.abs() <= INSTABILITY_BOUND) {
                        return Err(PoscmError::InvalidParameter(format!("clamp {value} mV for cell {node}")));
                    }
                }
                Intervention::VEdge { source, target, replacement } => {
                    view.check_dyad(*source, *target)?;
                    match replacement {
                        MessageReplacement::Clamp(m) if m.len() == 1 && m[0].is_finite() => {}
                        other => {
                            return Err(PoscmError::InvalidParameter(format!(
                                "edge {source}->{target}: only a one-dimensional conductance clamp applies, got {}",
                                other.describe()
                            )))
                        }
                    }
                }
                Intervention::BetaEdge { .. } => {
                    return Err(PoscmError::NotMessageAugmented("type messages of the layered network".into()));
                }
            }
        }
        Ok(())
    }

    /// Twin with types `a` and `b` of `population` exchanged, together with
    /// every parameter indexed by them. Applying it twice gives back `self`.
    pub fn type_swapped_twin(&self, population: usize, a: usize, b: usize) -> Result<Self> {
        self.validate()?;
        let k = self.layers.get(population).map(|l| l.types.len()).unwrap_or(0);
        if a >= k || b >= k {
            return Err(PoscmError::InvalidParameter(format!("types {a}, {b} of population {population}")));
        }
        let mut twin = self.clone();
        let layer = &mut twin.layers[population];
        let mut relabel = layer.relabel.clone().unwrap_or_else(|| (0..k).collect());
        for r in relabel.iter_mut() {
            if *r == a {
                *r = b;
            } else if *r == b {
                *r = a;
            }
        }
        layer.relabel = if relabel.iter().enumerate().all(|(i, r)| i == *r) { None } else { Some(relabel) };
        for c in &mut twin.connections {
            if c.post == population {
                c.synapse.swap(a, b);
            }
            if c.pre == population {
                c.prob.swap(a, b);
            }
        }
        Ok(twin)
    }

    /// Pair `(self, M')` where `M'` removes a fraction `block` of the
    /// `pre -> post` synapses and raises the remaining conductances by
    /// `1 / (1 - block)`, preserving `p * g`.
    pub fn calibrated_density_pair(&self, pre: usize, post: usize, block: f64) -> Result<(Self, Self)> {
        self.validate()?;
        if !(0.0..1.0).contains(&block) {
            return Err(PoscmError::InvalidParameter(format!("block fraction {block}")));
        }
        let idx = self
            .connection_index(pre, post)
            .ok_or_else(|| PoscmError::InvalidParameter(format!("no connection {pre} -> {post}")))?;
        let mut other = self.clone();
        let c = &mut other.connections[idx];
        for p in &mut c.prob {
            *p *= 1.0 - block;
        }
        for s in &mut c.synapse {
            s.g_max /= 1.0 - block;
        }
        Ok((self.clone(), other))
    }

    /// Copy with each population size multiplied by `scale[k]` (rounded, at
    /// least one cell).
    pub fn scaled(&self, scale: &[f64]) -> Result<Self> {
        if scale.len() != self.layers.len() || scale.iter().any(|s| !(*s > 0.0)) {
            return Err(PoscmError::InvalidParameter(format!("population scales {scale:?}")));
        }
        let mut out = self.clone();
        for (l, s) in out.layers.iter_mut().zip(scale) {
            l.size = ((l.size as f64 * s).round() as usize).max(1);
        }
        Ok(out)
    }
}

fn check_soma(s: &Soma) -> Result<()> {
    if s.g_leak > 0.0 && s.capacitance > 0.0 && s.e_leak.is_finite() {
        Ok(())
    } else {
        Err(PoscmError::InvalidParameter(format!("soma {s:?}")))
    }
}

/// Regime clamping the `g_max` of every potential `pre -> post` dyad to `g`.
/// Absent synapses are unaffected.
pub fn conductance_regime(spec: &LayeredNetSpec, pre: usize, post: usize, g: f64, label: impl Into<String>) -> Result<Regime> {
    let mut ivs = Vec::new();
    for j in spec.cells(pre) {
        for i in spec.cells(post) {
            ivs.push(Intervention::v_edge_clamp(j, i, vec![g]));
        }
    }
    Regime::new(label, ivs)
}

/// Runs both phases for `t_ms` with step `dt`. Value-node interventions hold
/// a cell's potential fixed (voltage clamp); value-edge clamps replace a
/// synapse's `g_max`. Every cell starts at its leak potential with closed synapses.
pub fn simulate_layered(spec: &LayeredNetSpec, draw: &ExogenousDraw, regime: &Regime, t_ms: f64, dt: f64) -> Result<Simulation> {
    if !(dt > 0.0 && t_ms >= dt) {
        return Err(PoscmError::InvalidParameter(format!("T = {t_ms} ms, dt = {dt} ms")));
    }
    let view = spec.poscm()?;
    let network = spec.instantiate_on(&view, draw, regime)?;
    let traces = integrate(spec, &network, draw, regime, t_ms, dt)?;
    Ok(Simulation { network, traces })
}

fn integrate(
    spec: &LayeredNetSpec,
    net: &Network,
    draw: &ExogenousDraw,
    regime: &Regime,
    t_ms: f64,
    dt: f64,
) -> Result<Vec<Trace>> {
    let n = net.layer.len();
    let steps = (t_ms / dt).round() as usize;
    let soma: Vec<Soma> = net.layer.iter().map(|l| spec.soma_of(*l)).collect();
    let clamp: Vec<Option<f64>> = (0..n).map(|c| regime.value_override(c)).collect();
    let stim: Vec<f64> = net
        .layer
        .iter()
        .map(|l| match &spec.stimulus {
            Some(s) if s.population == *l => s.amplitude_pa / 1000.0,
            _ => 0.0,
        })
        .collect();
    let spiking: Vec<bool> = net.layer.iter().map(|l| spec.spiking.is_some_and(|s| s.population == *l)).collect();
    let mut noise: Vec<Option<KeyedStream>> = (0..n)
        .map(|c| {
            (spec.within_layer_noise > 0.0)
                .then(|| KeyedStream::new(draw.seed, tag::VALUE, draw.replicate, c as u64 + 1, 1))
        })
        .collect();
    let mut v: Vec<f64> = (0..n).map(|c| clamp[c].unwrap_or(soma[c].e_leak)).collect();
    let mut s = vec![0.0; net.synapses.len()];
    let mut current = vec![0.0; n];
    let mut traces: Vec<Vec<f64>> = v.iter().map(|x| {
        let mut t = Vec::with_capacity(steps + 1);
        t.push(*x);
        t
    }).collect();
    let mut fired = vec![false; n];
    for _ in 0..steps {
        current.iter_mut().for_each(|c| *c = 0.0);
        for ((syn, p), sk) in net.synapses.iter().zip(&net.params).zip(s.iter_mut()) {
            current[syn.post] += synaptic_current(*sk, v[syn.post], p);
            *sk = synapse_step(*sk, v[syn.pre], p, dt);
        }
        for c in 0..n {
            if let Some(hold) = clamp[c] {
                v[c] = hold;
            } else if fired[c] {
                v[c] = spec.spiking.map_or(v[c], |l| l.reset);
                fired[c] = false;
            } else {
                let so = &soma[c];
                let mut drive = -so.g_leak * (v[c] - so.e_leak) + stim[c] + current[c];
                if let Some(st) = noise[c].as_mut() {
                    drive += spec.within_layer_noise * st.standard_normal();
                }
                v[c] += dt * drive / so.capacitance;
                if !(v[c].abs() <= INSTABILITY_BOUND) {
                    return Err(PoscmError::Unstable(format!("cell {c} reached {} mV", v[c])));
                }
                if spiking[c] {
                    let lif = spec.spiking.expect("spiking cells imply a readout");
                    if v[c] >= lif.threshold {
                        v[c] = lif.peak;
                        fired[c] = true;
                    }
                }
            }
            traces[c].push(v[c]);
        }
    }
    Ok(traces.into_iter().enumerate().map(|(cell, samples)| Trace { cell, dt, samples }).collect())
}

/// Logistic curve `lo + (hi - lo) / (1 + exp(-(v - mid) / width))` fitted by
/// least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmoidFit {
    pub lo: f64,
    pub hi: f64,
    pub mid: f64,
    pub width: f64,
    pub sse: f64,
}

impl SigmoidFit {
    pub fn eval(&self, v: f64) -> f64 {
        self.lo + (self.hi - self.lo) / (1.0 + (-(v - self.mid) / self.width).exp())
    }
}

/// Fits a logistic to `(x, y)`. For each `(mid, width)` on a search grid the
/// levels are solved by linear least squares; the best grid cell is refined
/// by successive grid contraction. Widths are kept at or above `min_width`.
pub fn fit_sigmoid(x: &[f64], y: &[f64], min_width: f64) -> Result<SigmoidFit> {
    if x.len() != y.len() || x.len() < 4 || !(min_width > 0.0) {
        return Err(PoscmError::InvalidParameter("sigmoid fit needs at least four points".into()));
    }
    let (xmin, xmax) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let solve = |mid: f64, width: f64| -> SigmoidFit {
        let g: Vec<f64> = x.iter().map(|v| 1.0 / (1.0 + (-(v - mid) / width).exp())).collect();
        let n = x.len() as f64;
        let (sg, sgg) = (g.iter().sum::<f64>(), g.iter().map(|a| a * a).sum::<f64>());
        let (sy, sgy) = (y.iter().sum::<f64>(), g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>());
        let det = n * sgg - sg * sg;
        let (lo, amp) = if det.abs() < 1e-12 {
            (sy / n, 0.0)
        } else {
            ((sgg * sy - sg * sgy) / det, (n * sgy - sg * sy) / det)
        };
        let sse = g.iter().zip(y).map(|(a, b)| (lo + amp * a - b).powi(2)).sum();
        SigmoidFit { lo, hi: lo + amp, mid, width, sse }
    };
    let span = xmax - xmin;
    let (mut m_lo, mut m_hi) = (xmin, xmax);
    let (mut w_lo, mut w_hi) = (min_width.ln(), (span.max(min_width) * 2.0).ln());
    let mut best = solve(0.5 * (xmin + xmax), span.max(min_width));
    for _ in 0..30 {
        for a in 0..=40 {
            let mid = m_lo + (m_hi - m_lo) * a as f64 / 40.0;
            for b in 0..=20 {
                let width = (w_lo + (w_hi - w_lo) * b as f64 / 20.0).exp();
                let f = solve(mid, width);
                if f.sse < best.sse - 1e-15 {
                    best = f;
                }
            }
        }
        let (dm, dw) = ((m_hi - m_lo) / 8.0, (w_hi - w_lo) / 8.0);
        m_lo = (best.mid - dm).max(xmin);
        m_hi = (best.mid + dm).min(xmax);
        w_lo = (best.width.ln() - dw).max(min_width.ln());
        w_hi = best.width.ln() + dw;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn synapse_step_examples() {
        let p = SynapseParams::default();
        assert_eq!(p.activation(-45.0), 0.0);
        let s_inf = 1f64.tanh();
        assert_relative_eq!(synapse_step(s_inf, -35.0, &p, 0.1), s_inf, epsilon = 1e-15);
        let s1 = synapse_step(0.0, -35.0, &p, 0.1);
        assert_relative_eq!(s1, s_inf * 0.1 / (10.0 * (1.0 - s_inf)), epsilon = 1e-15);
        assert!((s1 - 0.03195).abs() < 1e-4, "{s1}");
        // Strong drive saturates the activation; the step stops at s_inf.
        let sat = p.activation(500.0);
        assert_eq!(synapse_step(0.0, 500.0, &p, 0.1), sat);
        assert_eq!(synapse_step(0.9, -80.0, &p, 0.1), 0.9 - 0.1 * 0.9 / 10.0);
    }

    #[test]
    fn synaptic_current_examples() {
        let p = SynapseParams::default();
        assert_eq!(synaptic_current(0.0, -30.0, &p), 0.0);
        assert_eq!(synaptic_current(0.7, p.e_rev, &p), 0.0);
        let i = synaptic_current(0.5, p.e_rev + 20.0, &p);
        assert_relative_eq!(i.abs(), 0.0256, epsilon = 1e-15);
        let inv = SynapseParams { sign_inverting: true, ..p };
        assert_eq!(synaptic_current(0.5, 20.0, &inv), -i);
    }

    fn two_cells(sign_inverting: bool, g: f64) -> LayeredNetSpec {
        let pop = |name: &str| Population {
            name: name.into(),
            size: 1,
            types: vec!["t".into()],
            mix: vec![1.0],
            relabel: None,
            soma: None,
        };
        LayeredNetSpec {
            layers: vec![pop("pre"), pop("post")],
            connections: vec![Connection {
                pre: 0,
                post: 1,
                prob: vec![1.0],
                synapse: vec![SynapseParams { g_max: g, sign_inverting, ..SynapseParams::default() }],
            }],
            soma: Soma { g_leak: 0.004, e_leak: -60.0, capacitance: 0.04 },
            stimulus: None,
            spiking: None,
            within_layer_noise: 0.0,
        }
    }

    fn run(spec: &LayeredNetSpec, regime: &Regime, t: f64) -> Simulation {
        let draw = spec.draw(1, 0).unwrap();
        simulate_layered(spec, &draw, regime, t, 0.1).unwrap()
    }

    #[test]
    fn leak_only_relaxes_to_rest() {
        let mut spec = two_cells(false, 0.0);
        spec.connections.clear();
        let draw = spec.draw(0, 0).unwrap();
        let mut traces = simulate_layered(&spec, &draw, &Regime::observational(), 50.0, 0.1).unwrap().traces;
        assert!(traces.iter().all(|t| t.samples.iter().all(|v| *v == -60.0)));
        // A constant stimulus moves the rest point to E_L + I / g_L.
        spec.stimulus = Some(Stimulus { amplitude_pa: 40.0, population: 0 });
        traces = simulate_layered(&spec, &draw, &Regime::observational(), 50.0, 0.1).unwrap().traces;
        let target = -60.0 + 0.04 / 0.004;
        assert!((traces[0].samples.last().unwrap() - target).abs() < 0.01 * 10.0);
    }

    #[test]
    fn single_synapse_sign_and_fixed_point() {
        let clamp = Regime::do_values("pr", &[(0, -30.0)]).unwrap();
        for inverting in [false, true] {
            let spec = two_cells(inverting, 0.001);
            let post = run(&spec, &clamp, 300.0).traces[1].samples.last().copied().unwrap();
            let p = spec.connections[0].synapse[0];
            let gs = p.g_max * p.activation(-30.0);
            let sign = if inverting { 1.0 } else { -1.0 };
            // Steady state of g_L (E_L - V) + sign * g s (V - E) = 0.
            let expected = (0.004 * -60.0 - sign * gs * p.e_rev) / (0.004 - sign * gs);
            assert!((post - expected).abs() < 0.01 * expected.abs(), "{post} vs {expected}");
            assert_eq!(post > -60.0, !inverting);
        }
    }

    #[test]
    fn blocked_synapse_matches_unconnected_control() {
        let clamp = Regime::do_values("pr", &[(0, -20.0)]).unwrap();
        let blocked = run(&two_cells(false, 0.0), &clamp, 50.0);
        let mut control = two_cells(false, 0.0);
        control.connections[0].prob = vec![0.0];
        let c = run(&control, &clamp, 50.0);
        assert_eq!(blocked.network.synapses.len(), 1);
        assert_eq!(blocked.traces[1].samples, c.traces[1].samples);
    }

    #[test]
    fn instability_is_reported() {
        let clamp = Regime::do_values("pr", &[(0, 0.0)]).unwrap();
        let spec = two_cells(true, 0.1);
        let draw = spec.draw(1, 0).unwrap();
        assert!(matches!(
            simulate_layered(&spec, &draw, &clamp, 200.0, 0.1),
            Err(PoscmError::Unstable(_))
        ));
    }

    #[test]
    fn edge_clamp_overrides_conductance() {
        let spec = two_cells(false, 0.001);
        let regime = Regime::new("g", vec![Intervention::v_edge_clamp(0, 1, vec![0.0])]).unwrap();
        let sim = run(&spec, &regime, 10.0);
        assert_eq!(sim.network.params[0].g_max, 0.0);
    }

    #[test]
    fn twin_is_an_involution_and_relabels_types() {
        let spec = LayeredNetSpec::retina();
        let twin = spec.type_swapped_twin(2, 0, 1).unwrap();
        assert_ne!(twin, spec);
        assert_eq!(twin.type_swapped_twin(2, 0, 1).unwrap(), spec);
        let draw = spec.draw(3, 0).unwrap();
        let a = spec.instantiate(&draw, &Regime::observational()).unwrap();
        let b = twin.instantiate(&draw, &Regime::observational()).unwrap();
        assert_eq!(a.adjacency, b.adjacency);
        for c in spec.cells(2) {
            assert_eq!(a.types[c], 1 - b.types[c]);
        }
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn density_pair_conductance() {
        let spec = LayeredNetSpec::retina();
        let (m, m2) = spec.calibrated_density_pair(0, 2, 0.4).unwrap();
        assert_eq!(m, spec);
        let g = m2.connections[1].synapse[1].g_max;
        assert!((g - 0.0042667).abs() < 1e-7, "{g}");
        assert!((m2.connections[1].prob[0] - 0.15).abs() < 1e-12);
        assert_eq!(spec.calibrated_density_pair(0, 2, 0.0).unwrap().1, spec);
        assert!(spec.calibrated_density_pair(0, 4, 0.4).is_err());
    }

    #[test]
    fn density_pair_matches_mean_drive() {
        let mut spec = LayeredNetSpec::retina();
        spec.layers[0].size = 200;
        spec.layers[2].size = 200;
        let (m, m2) = spec.calibrated_density_pair(0, 2, 0.4).unwrap();
        let mean_drive = |s: &LayeredNetSpec| {
            let net = s.instantiate(&s.draw(5, 0).unwrap(), &Regime::observational()).unwrap();
            let cells: Vec<usize> = s.cells(2).collect();
            cells.iter().map(|c| net.total_conductance(1, *c)).sum::<f64>() / cells.len() as f64
        };
        let (a, b) = (mean_drive(&m), mean_drive(&m2));
        assert!((a - b).abs() < 0.03 * a, "{a} vs {b}");
    }

    #[test]
    fn default_network_is_stable_under_strong_edge_clamps() {
        let spec = LayeredNetSpec::retina();
        let regime = conductance_regime(&spec, 0, 2, 0.008, "g").unwrap();
        for seed in 0..4 {
            let draw = spec.draw(seed, 0).unwrap();
            simulate_layered(&spec, &draw, &regime, 200.0, 0.1).unwrap();
        }
    }

    #[test]
    fn sigmoid_fit_recovers_parameters() {
        let x: Vec<f64> = (0..21).map(|k| -70.0 + 2.5 * k as f64).collect();
        let truth = SigmoidFit { lo: -1.0, hi: 2.0, mid: -43.0, width: 4.0, sse: 0.0 };
        let y: Vec<f64> = x.iter().map(|v| truth.eval(*v)).collect();
        let f = fit_sigmoid(&x, &y, 0.5).unwrap();
        assert!((f.mid - truth.mid).abs() < 1e-3 && (f.width - 4.0).abs() < 1e-3, "{f:?}");
        assert!((f.lo + 1.0).abs() < 1e-4 && (f.hi - 2.0).abs() < 1e-4);
    }

    #[test]
    fn spiking_readout_fires() {
        let mut spec = two_cells(false, 0.0);
        spec.stimulus = Some(Stimulus { amplitude_pa: 200.0, population: 1 });
        spec.spiking = Some(Lif { population: 1, threshold: -50.0, peak: 20.0, reset: -65.0 });
        let sim = run(&spec, &Regime::observational(), 200.0);
        let rate = crate::stats::firing_rate(&sim.traces[1].samples, -20.0, 0.1).unwrap();
        assert!(rate > 10.0, "{rate}");
        assert_eq!(crate::stats::firing_rate(&sim.traces[0].samples, -20.0, 0.1).unwrap(), 0.0);
    }
}
