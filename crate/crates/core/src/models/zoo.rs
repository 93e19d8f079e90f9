//! Small ground-truth models with known kernels.

use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{PoscmError, Result};
use crate::generate::InstanceHandle;
use crate::exogenous::sample_exogenous;
use crate::interventions::Intervention;
use crate::messages::{MessageMatrix, MessageMechanism, Univariate};
use crate::rng::normal_quantile;
use crate::spec::{Mechanism, MechanismHandle, MechanismOperator, MessageParam, NoiseArity, PoscmSpec, StructureKernel};

use std::sync::Arc;

fn check_open_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(PoscmError::InvalidParameter(format!("{name} = {x} outside (0, 1)")))
    }
}

/// Context channel for models whose contexts are degenerate.
fn null_context() -> MessageMechanism {
    MessageMechanism::new(1, |_, _| vec![0.0], |_, _| 0.0)
}

/// Two binary nodes with a latent edge `A_12 ~ Bern(p)`. With the edge,
/// `V_2 ~ Bern(q_{V_1})`; without it, `V_2 ~ Bern(1/2)`. `V_1 ~ Bern(1/2)`.
///
/// Message form: `d = 2`, `H(v) = (1, q_v)` and
/// `F((m1, m2), u) = 1{u < (1 - m1)/2 + m2}`. The edge probability may be 1.
pub fn two_node_confounding(p: f64, q0: f64, q1: f64) -> Result<PoscmSpec> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(PoscmError::InvalidParameter(format!("p = {p} outside (0, 1]")));
    }
    check_open_unit("q0", q0)?;
    check_open_unit("q1", q1)?;
    let value = MessageMechanism::new(
        2,
        move |_, v| vec![1.0, if v > 0.5 { q1 } else { q0 }],
        |mm, u| {
            let m = mm.sum();
            f64::from(u8::from(u[0] < (1.0 - m[0]) / 2.0 + m[1]))
        },
    );
    let op = MechanismOperator::fixed_messages(value);
    PoscmSpec::builder(2)
        .name(format!("two-node(p={p},q0={q0},q1={q1})"))
        .alpha(StructureKernel::constant(p))
        .mechanism(0, op.clone())
        .mechanism(1, op.clone())
        .build()?
        .with_messages(vec![MessageParam::new(null_context(), op.clone()), MessageParam::new(null_context(), op)])
}

/// Replacement forcing `V_2 = V_1` on the two-node model: `H(v) = (1, v)`.
pub fn copy_edge_intervention() -> Intervention {
    Intervention::VEdge {
        source: 0,
        target: 1,
        replacement: crate::messages::MessageReplacement::function("copy", |v| vec![1.0, v]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToySide {
    /// `W = x * (y + z)`.
    Lhs,
    /// `W = x*y + x*z`.
    Rhs,
}

impl ToySide {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const Z: usize = 2;

    pub fn output(self) -> usize {
        match self {
            ToySide::Lhs => 4,
            ToySide::Rhs => 5,
        }
    }

    /// The dyad carrying `x` on the first route into the output: `x -> W` on
    /// the left, `x -> x*y` on the right.
    pub fn x_channel(self) -> (usize, usize) {
        match self {
            ToySide::Lhs => (0, 4),
            ToySide::Rhs => (0, 3),
        }
    }

    /// Clamp of the `x` channel to the product message of `x_prime`.
    pub fn x_channel_clamp(self, x_prime: f64) -> Intervention {
        let (s, t) = self.x_channel();
        Intervention::v_edge_clamp(s, t, vec![1.0, x_prime])
    }
}

fn sum_mechanism() -> MessageMechanism {
    MessageMechanism::new(2, |_, v| vec![1.0, v], |mm, _| mm.sum()[1])
}

/// Product of the present parents' values, 0 when no edge is present.
fn product_mechanism() -> MessageMechanism {
    MessageMechanism::new(
        2,
        |_, v| vec![1.0, v],
        |mm: &MessageMatrix, _| {
            let mut present = mm.slots.iter().filter(|s| s[0] != 0.0).peekable();
            if present.peek().is_none() {
                return 0.0;
            }
            present.map(|s| s[1]).product()
        },
    )
}

/// The deterministic distributive toy. Inputs `x, y, z` are roots with value
/// 0 unless intervened on; both sides use product messages `(1, v)`.
pub fn distributive_toy(side: ToySide) -> Result<PoscmSpec> {
    let root = MechanismOperator::fixed_messages(MessageMechanism::new(2, |_, v| vec![1.0, v], |_, _| 0.0));
    let sum = MechanismOperator::fixed_messages(sum_mechanism());
    let prod = MechanismOperator::fixed_messages(product_mechanism());
    let (ops, edges) = match side {
        ToySide::Lhs => (vec![root.clone(), root.clone(), root, sum, prod], vec![(1, 3), (2, 3), (0, 4), (3, 4)]),
        ToySide::Rhs => (
            vec![root.clone(), root.clone(), root, prod.clone(), prod, sum],
            vec![(0, 3), (1, 3), (0, 4), (2, 4), (3, 5), (4, 5)],
        ),
    };
    let n = ops.len();
    let mut b = PoscmSpec::builder(n)
        .name(format!("distributive-{side:?}").to_lowercase())
        .all_value_domains(Domain::interval(-1e12, 1e12)?)
        .alpha(StructureKernel::fixed(edges));
    for (i, op) in ops.iter().enumerate() {
        b = b.mechanism(i, op.clone());
    }
    b.build()?.with_messages(ops.into_iter().map(|op| MessageParam::new(null_context(), op)).collect())
}

/// Edge probability of the random binary models, by source context.
const RANDOM_EDGE_PROB: [f64; 2] = [0.35, 0.65];

/// Random binary model on `n` nodes: binary contexts, context-dependent edge
/// probabilities, and mechanisms drawn by `Gamma` as a random conditional
/// probability table over the realized parents (entries in `[0.05, 0.95]`,
/// read from `U^f`).
pub fn random_binary_poscm(n: usize) -> Result<PoscmSpec> {
    if !(1..=16).contains(&n) {
        return Err(PoscmError::InvalidParameter(format!("{n} nodes; 1 to 16 supported")));
    }
    let table = 1usize << (n - 1);
    let mut b = PoscmSpec::builder(n)
        .name(format!("random-binary-{n}"))
        .all_context_domains(Domain::binary())
        .alpha(StructureKernel::product(|_, _, b| RANDOM_EDGE_PROB[usize::from(b > 0.5)]));
    let op = MechanismOperator::new(false, |_, parents, u_f| {
        let k = parents.len();
        let probs: Vec<f64> = u_f[..1 << k].iter().map(|u| 0.05 + 0.9 * u).collect();
        Ok(Mechanism::direct(move |pv, u| {
            let idx = pv.iter().enumerate().fold(0, |acc, (pos, (_, v))| acc | (usize::from(*v > 0.5) << pos));
            f64::from(u8::from(u[0] < probs[idx]))
        }))
    });
    for i in 0..n {
        b = b.mechanism(i, op.clone()).noise_arity(i, NoiseArity { beta: 1, f: table, v: 1 });
    }
    b.build()
}

/// Largest change of `P(V_i = 1)` from toggling each realized parent of a
/// [`random_binary_poscm`] mechanism, over all assignments of the others.
pub fn cpt_parent_effects(handle: &MechanismHandle) -> Vec<f64> {
    let k = handle.parents.len();
    (0..k)
        .map(|pos| {
            (0..1usize << k)
                .filter(|cfg| cfg & (1 << pos) == 0)
                .map(|cfg| 0.9 * (handle.u_f[cfg | (1 << pos)] - handle.u_f[cfg]).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// First frozen instance of `spec` (a [`random_binary_poscm`]) at or after
/// replicate `start` whose realized edges all have effect at least
/// `min_effect`. Returns the instance and the replicate it came from.
pub fn effective_binary_instance(spec: &PoscmSpec, seed: u64, start: u64, min_effect: f64) -> Result<(InstanceHandle, u64)> {
    for r in start..start + 10_000 {
        let inst = InstanceHandle::from_draw(spec, Arc::new(sample_exogenous(spec, seed, r)))?;
        if inst.mech.iter().all(|h| cpt_parent_effects(h).iter().all(|e| *e >= min_effect)) {
            return Ok((inst, r));
        }
    }
    Err(PoscmError::InvalidParameter(format!("no instance with edge effect {min_effect} in 10000 draws")))
}

/// Four binary nodes with known kernels, for kernel recovery.
///
/// * edges: `P(A_ji = 1 | beta_j = b) = edge_prob[b]`;
/// * contexts: roots (and nodes without realized parents) draw
///   `beta ~ Bern(root_context)`; otherwise `beta` is the majority of the
///   parents' contexts (ties to 1), flipped with probability `flip`;
/// * values: nodes without realized parents draw `Bern(root_value[beta])`;
///   otherwise `V ~ Bern(p)` with `p = parity_high[beta]` when the parents'
///   values have odd parity and `parity_low[beta]` when even.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelModel {
    pub edge_prob: [f64; 2],
    pub root_context: f64,
    pub flip: f64,
    pub root_value: [f64; 2],
    pub parity_low: [f64; 2],
    pub parity_high: [f64; 2],
}

impl Default for KernelModel {
    fn default() -> Self {
        Self {
            edge_prob: [0.55, 0.85],
            root_context: 0.4,
            flip: 0.1,
            root_value: [0.3, 0.6],
            parity_low: [0.15, 0.9],
            parity_high: [0.85, 0.2],
        }
    }
}

impl KernelModel {
    pub const N: usize = 4;

    pub fn spec(&self) -> Result<PoscmSpec> {
        let m = *self;
        for p in m.edge_prob.iter().chain(&m.root_value).chain(&m.parity_low).chain(&m.parity_high) {
            if !(0.0..=1.0).contains(p) {
                return Err(PoscmError::InvalidParameter(format!("probability {p}")));
            }
        }
        check_open_unit("root_context", m.root_context)?;
        if !(0.0..0.5).contains(&m.flip) {
            return Err(PoscmError::InvalidParameter(format!("flip rate {}", m.flip)));
        }
        let context = MessageMechanism::new(
            2,
            |_, b| vec![1.0, b],
            move |mm, u| {
                let s = mm.sum();
                let b = if s[0] == 0.0 {
                    u[0] < m.root_context
                } else {
                    (2.0 * s[1] >= s[0]) != (u[0] < m.flip)
                };
                f64::from(u8::from(b))
            },
        );
        let value = MechanismOperator::by_context(move |b| {
            let c = usize::from(b > 0.5);
            MessageMechanism::new(
                2,
                |_, v| vec![1.0, v],
                move |mm, u| {
                    let s = mm.sum();
                    let p = if s[0] == 0.0 {
                        m.root_value[c]
                    } else if (s[1].round() as i64) % 2 == 1 {
                        m.parity_high[c]
                    } else {
                        m.parity_low[c]
                    };
                    f64::from(u8::from(u[0] < p))
                },
            )
        });
        let mut b = PoscmSpec::builder(Self::N)
            .name("kernel-model")
            .all_context_domains(Domain::binary())
            .alpha(StructureKernel::product(move |_, _, b| m.edge_prob[usize::from(b > 0.5)]));
        for i in 0..Self::N {
            b = b.mechanism(i, value.clone());
        }
        b.build()?.with_messages(vec![MessageParam::new(context, value); Self::N])
    }

    /// True `P(beta_i = 1 | beta_S = contexts, Pa(i) = S)`.
    pub fn context_prob(&self, contexts: &[f64]) -> f64 {
        if contexts.is_empty() {
            return self.root_context;
        }
        let ones = contexts.iter().filter(|b| **b > 0.5).count();
        if 2 * ones >= contexts.len() {
            1.0 - self.flip
        } else {
            self.flip
        }
    }

    /// True `P(V_i = 1 | V_S = values, Pa(i) = S, beta_i = b)`.
    pub fn value_prob(&self, values: &[f64], b: f64) -> f64 {
        let c = usize::from(b > 0.5);
        if values.is_empty() {
            return self.root_value[c];
        }
        let ones = values.iter().filter(|v| **v > 0.5).count();
        if ones % 2 == 1 {
            self.parity_high[c]
        } else {
            self.parity_low[c]
        }
    }
}

/// Three nodes with contexts in `[0, 1]`, used for continuous context twins.
/// Root contexts are uniform; otherwise `beta_i = (mean parent context + u) / 2`.
/// Edges appear with probability `0.2 + 0.6 beta_j` and
/// `V_i = (1/2 + beta_i) sum_{parents} V_j + N(0, 1)`.
pub fn context_twin_model() -> Result<PoscmSpec> {
    let context = MessageMechanism::new(
        2,
        |_, b| vec![1.0, b],
        |mm, u| {
            let s = mm.sum();
            if s[0] == 0.0 {
                u[0]
            } else {
                0.5 * (s[1] / s[0] + u[0])
            }
        },
    );
    let value = MechanismOperator::by_context(|b| {
        MessageMechanism::new(1, |_, v| vec![v], move |mm, u| (0.5 + b) * mm.sum()[0] + normal_quantile(u[0]))
    });
    let mut builder = PoscmSpec::builder(3)
        .name("context-twin")
        .all_context_domains(Domain::interval(0.0, 1.0)?)
        .all_value_domains(Domain::interval(-1e3, 1e3)?)
        .alpha(StructureKernel::product(|_, _, b| 0.2 + 0.6 * b));
    for i in 0..3 {
        builder = builder.mechanism(i, value.clone());
    }
    builder.build()?.with_messages(vec![MessageParam::new(context, value); 3])
}

/// Three continuous nodes for message recovery. `V_0 ~ N(0, 1)`,
/// `V_1 = V_0 / 2 + N(0, 1/4)` when `0 -> 1` is present, and
/// `V_2 = A_02 H(V_0) + A_12 V_1 / 2 + noise_sd * N(0, 1)` with
/// `H = channel`. Every dyad is present with probability `edge_prob`.
pub fn message_channel_model(channel: Univariate, edge_prob: f64, noise_sd: f64) -> Result<PoscmSpec> {
    channel.validate()?;
    if !(0.0..=1.0).contains(&edge_prob) || !(noise_sd >= 0.0) {
        return Err(PoscmError::InvalidParameter(format!("edge_prob {edge_prob}, noise_sd {noise_sd}")));
    }
    let root = MessageMechanism::new(1, |_, v| vec![v], |_, u| normal_quantile(u[0]));
    let middle = MessageMechanism::new(1, |_, v| vec![0.5 * v], |mm, u| mm.sum()[0] + 0.5 * normal_quantile(u[0]));
    let target = MessageMechanism::new(
        1,
        move |src, v| vec![if src == 0 { channel.eval(v) } else { 0.5 * v }],
        move |mm, u| mm.sum()[0] + noise_sd * normal_quantile(u[0]),
    );
    let ops: Vec<MechanismOperator> = [root, middle, target].into_iter().map(MechanismOperator::fixed_messages).collect();
    let mut b = PoscmSpec::builder(3)
        .name("message-channel")
        .all_value_domains(Domain::interval(-100.0, 100.0)?)
        .alpha(StructureKernel::constant(edge_prob));
    for (i, op) in ops.iter().enumerate() {
        b = b.mechanism(i, op.clone());
    }
    b.build()?.with_messages(ops.into_iter().map(|op| MessageParam::new(null_context(), op)).collect())
}
