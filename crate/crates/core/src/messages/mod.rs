//! Message-augmented mechanisms.
//!
//! Each directed dyad `j -> i` carries a message `A_ji * H_{i<-j}(x_j)` of a
//! dimension fixed for node `i`; an aggregator turns the matrix of messages
//! (one column per potential parent) plus noise into the node's context or
//! value. Absent edges contribute the zero vector.

pub mod gauge;
pub mod kas;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{PoscmError, Result};

pub use gauge::{gauge_transform, Gauge};
pub use kas::{
    clip, cube_from_unit, cube_to_unit, kas_eval_direct, kas_to_messages, restrict_to_cube, KasForm, Univariate,
};

pub type SourceMessageFn = Arc<dyn Fn(usize, f64) -> Vec<f64> + Send + Sync>;
pub type MessageMap = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
pub type AggregateFn = Arc<dyn Fn(&MessageMatrix, &[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Context,
    Value,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Context => f.write_str("context"),
            Channel::Value => f.write_str("value"),
        }
    }
}

/// Messages arriving at one node, one column per potential parent in generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageMatrix {
    pub dim: usize,
    pub sources: Vec<usize>,
    pub slots: Vec<Vec<f64>>,
}

impl MessageMatrix {
    pub fn new(dim: usize, sources: Vec<usize>) -> Self {
        let slots = vec![vec![0.0; dim]; sources.len()];
        Self { dim, sources, slots }
    }

    pub fn slot(&self, source: usize) -> Option<&[f64]> {
        self.sources
            .iter()
            .position(|s| *s == source)
            .map(|k| self.slots[k].as_slice())
    }

    /// Coordinate-wise sum over all slots.
    pub fn sum(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for slot in &self.slots {
            for (a, m) in acc.iter_mut().zip(slot) {
                *a += m;
            }
        }
        acc
    }

    pub fn nonzero_slots(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.sources
            .iter()
            .zip(&self.slots)
            .filter(|(_, s)| s.iter().any(|x| *x != 0.0))
            .map(|(src, s)| (*src, s.as_slice()))
    }
}

/// One dyadic message function `H_{target<-source}` on a given channel.
#[derive(Clone)]
pub struct EdgeMessageFn {
    pub target: usize,
    pub source: usize,
    pub channel: Channel,
    pub dim: usize,
    map: MessageMap,
}

impl fmt::Debug for EdgeMessageFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EdgeMessageFn({} {}->{}, d={})", self.channel, self.source, self.target, self.dim)
    }
}

impl EdgeMessageFn {
    pub fn new(target: usize, source: usize, channel: Channel, dim: usize, map: MessageMap) -> Self {
        Self { target, source, channel, dim, map }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        (self.map)(x)
    }

    pub fn gated(&self, x: f64, present: bool) -> Vec<f64> {
        if present {
            self.eval(x)
        } else {
            vec![0.0; self.dim]
        }
    }
}

/// Aggregation map `F_i` (values) or `Phi_i` (contexts).
#[derive(Clone)]
pub struct Aggregator {
    pub target: usize,
    pub channel: Channel,
    map: AggregateFn,
}

impl fmt::Debug for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Aggregator({} at {})", self.channel, self.target)
    }
}

impl Aggregator {
    pub fn new(target: usize, channel: Channel, map: AggregateFn) -> Self {
        Self { target, channel, map }
    }

    pub fn apply(&self, messages: &MessageMatrix, noise: &[f64]) -> f64 {
        (self.map)(messages, noise)
    }
}

/// Replacement installed by an edge-message intervention.
#[derive(Clone)]
pub enum MessageReplacement {
    Clamp(Vec<f64>),
    Function { name: String, map: MessageMap },
}

impl fmt::Debug for MessageReplacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MessageReplacement::Clamp(m) => write!(f, "Clamp({m:?})"),
            MessageReplacement::Function { name, .. } => write!(f, "Function({name})"),
        }
    }
}

impl MessageReplacement {
    pub fn function(name: impl Into<String>, map: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        MessageReplacement::Function { name: name.into(), map: Arc::new(map) }
    }

    pub fn apply(&self, x: f64) -> Vec<f64> {
        match self {
            MessageReplacement::Clamp(m) => m.clone(),
            MessageReplacement::Function { map, .. } => map(x),
        }
    }

    pub fn describe(&self) -> String {
        format!("{self:?}")
    }
}

/// A mechanism in message form: per-source message maps of a fixed dimension
/// and an aggregator over the gated message matrix.
#[derive(Clone)]
pub struct MessageMechanism {
    pub dim: usize,
    pub h: SourceMessageFn,
    pub aggregate: AggregateFn,
}

impl fmt::Debug for MessageMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MessageMechanism(d={})", self.dim)
    }
}

impl MessageMechanism {
    pub fn new(
        dim: usize,
        h: impl Fn(usize, f64) -> Vec<f64> + Send + Sync + 'static,
        aggregate: impl Fn(&MessageMatrix, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { dim, h: Arc::new(h), aggregate: Arc::new(aggregate) }
    }

    pub fn edge_fn(&self, target: usize, source: usize, channel: Channel) -> EdgeMessageFn {
        let h = Arc::clone(&self.h);
        EdgeMessageFn::new(target, source, channel, self.dim, Arc::new(move |x| h(source, x)))
    }

    pub fn aggregator(&self, target: usize, channel: Channel) -> Aggregator {
        Aggregator::new(target, channel, Arc::clone(&self.aggregate))
    }

    /// Builds the gated message matrix. `inputs[k]` is `Some(x)` when the edge
    /// from `sources[k]` is present, with `x` the source quantity.
    pub fn messages<'r>(
        &self,
        sources: &[usize],
        inputs: &[Option<f64>],
        replacement: impl Fn(usize) -> Option<&'r MessageReplacement>,
    ) -> Result<MessageMatrix> {
        let mut mm = MessageMatrix::new(self.dim, sources.to_vec());
        for (k, (src, input)) in sources.iter().zip(inputs).enumerate() {
            let Some(x) = input else { continue };
            let msg = match replacement(*src) {
                Some(r) => r.apply(*x),
                None => (self.h)(*src, *x),
            };
            if msg.len() != self.dim {
                return Err(PoscmError::MessageDimension { expected: self.dim, got: msg.len() });
            }
            mm.slots[k] = msg;
        }
        Ok(mm)
    }

    pub fn evaluate<'r>(
        &self,
        sources: &[usize],
        inputs: &[Option<f64>],
        replacement: impl Fn(usize) -> Option<&'r MessageReplacement>,
        noise: &[f64],
    ) -> Result<f64> {
        let mm = self.messages(sources, inputs, replacement)?;
        Ok((self.aggregate)(&mm, noise))
    }
}

/// The sum-of-univariates case: `x_i = sum_j g_j(x_j) + noise(u)` in message
/// form with one coordinate per slot.
pub fn additive_mechanism(
    g: impl Fn(usize, f64) -> f64 + Send + Sync + 'static,
    noise: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
) -> MessageMechanism {
    MessageMechanism::new(1, move |src, x| vec![g(src, x)], move |mm, u| mm.sum()[0] + noise(u))
}
