//! The generative program of a POSCM.

use std::fmt;
use std::sync::Arc;

use crate::domain::Domain;
use crate::error::{PoscmError, Result};
use crate::messages::{Channel, MessageMechanism};

/// `(j, i, beta_j) -> P(A_ji = 1)`.
pub type EdgeProbFn = Arc<dyn Fn(usize, usize, f64) -> f64 + Send + Sync>;
/// Joint out-row sampler `(j, beta_j, targets, uniforms) -> indicators`, one
/// uniform per target dyad.
pub type RowSamplerFn = Arc<dyn Fn(usize, f64, &[usize], &[f64]) -> Vec<bool> + Send + Sync>;
/// Direct map from `(parent id, parent quantity)` pairs and noise to a scalar.
pub type DirectFn = Arc<dyn Fn(&[(usize, f64)], &[f64]) -> f64 + Send + Sync>;
/// `(beta_i, parent set, u_f) -> mechanism`.
pub type GammaFn = Arc<dyn Fn(f64, &[usize], &[f64]) -> Result<Mechanism> + Send + Sync>;

#[derive(Clone)]
pub struct StructureKernel {
    pub edge_prob: EdgeProbFn,
    pub row_sampler: Option<RowSamplerFn>,
}

impl StructureKernel {
    pub fn product(edge_prob: impl Fn(usize, usize, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { edge_prob: Arc::new(edge_prob), row_sampler: None }
    }

    pub fn constant(p: f64) -> Self {
        Self::product(move |_, _, _| p)
    }

    /// Fixed adjacency: `A_ji = 1` exactly on the listed dyads.
    pub fn fixed(edges: Vec<(usize, usize)>) -> Self {
        Self::product(move |j, i, _| if edges.contains(&(j, i)) { 1.0 } else { 0.0 })
    }

    pub fn with_row_sampler(
        mut self,
        f: impl Fn(usize, f64, &[usize], &[f64]) -> Vec<bool> + Send + Sync + 'static,
    ) -> Self {
        self.row_sampler = Some(Arc::new(f));
        self
    }
}

/// Evaluable mechanism produced by a mechanism operator.
#[derive(Clone)]
pub enum Mechanism {
    /// Takes exactly the realized parents' values.
    Direct(DirectFn),
    /// Gated messages from every potential parent.
    Messages(MessageMechanism),
}

impl Mechanism {
    pub fn direct(f: impl Fn(&[(usize, f64)], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Mechanism::Direct(Arc::new(f))
    }

    pub fn is_message_form(&self) -> bool {
        matches!(self, Mechanism::Messages(_))
    }
}

impl fmt::Debug for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mechanism::Direct(_) => f.write_str("Direct"),
            Mechanism::Messages(m) => write!(f, "{m:?}"),
        }
    }
}

/// Realized `f_i` with the inputs it was drawn from.
#[derive(Clone, Debug)]
pub struct MechanismHandle {
    pub beta: f64,
    pub parents: Vec<usize>,
    pub u_f: Vec<f64>,
    pub mechanism: Mechanism,
}

/// `phi_i`; the context mechanism of a root acts as its prior.
#[derive(Clone)]
pub enum ContextMechanism {
    Direct(DirectFn),
    Messages(MessageMechanism),
}

impl ContextMechanism {
    pub fn direct(f: impl Fn(&[(usize, f64)], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ContextMechanism::Direct(Arc::new(f))
    }

    /// Context fixed at `b` regardless of parents and noise.
    pub fn constant(b: f64) -> Self {
        Self::direct(move |_, _| b)
    }

    /// Uniform on a finite label set (or interval) ignoring parents.
    pub fn uniform(domain: Domain) -> Self {
        Self::direct(move |_, u| domain.from_uniform(u[0]))
    }

    /// Categorical prior over label indices.
    pub fn categorical(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || total <= 0.0 {
            return Err(PoscmError::InvalidParameter(format!("categorical weights {weights:?}")));
        }
        let cdf: Vec<f64> = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w / total;
                Some(*acc)
            })
            .collect();
        Ok(Self::direct(move |_, u| {
            cdf.iter().position(|c| u[0] < *c).unwrap_or(cdf.len() - 1) as f64
        }))
    }

    pub fn is_message_form(&self) -> bool {
        matches!(self, ContextMechanism::Messages(_))
    }
}

/// `Gamma_i`. `message_form` declares that every mechanism it returns is in
/// message form, which is what admits value-edge interventions at node `i`.
#[derive(Clone)]
pub struct MechanismOperator {
    pub message_form: bool,
    pub build: GammaFn,
}

impl MechanismOperator {
    pub fn new(
        message_form: bool,
        build: impl Fn(f64, &[usize], &[f64]) -> Result<Mechanism> + Send + Sync + 'static,
    ) -> Self {
        Self { message_form, build: Arc::new(build) }
    }

    /// Deterministic operator returning the same direct mechanism for every input.
    pub fn fixed_direct(f: impl Fn(&[(usize, f64)], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        let f: DirectFn = Arc::new(f);
        Self::new(false, move |_, _, _| Ok(Mechanism::Direct(Arc::clone(&f))))
    }

    pub fn fixed_messages(mech: MessageMechanism) -> Self {
        Self::new(true, move |_, _, _| Ok(Mechanism::Messages(mech.clone())))
    }

    /// Message mechanism chosen by the node's context.
    pub fn by_context(build: impl Fn(f64) -> MessageMechanism + Send + Sync + 'static) -> Self {
        Self::new(true, move |b, _, _| Ok(Mechanism::Messages(build(b))))
    }

    pub fn assign(&self, beta: f64, parents: &[usize], u_f: &[f64]) -> Result<Mechanism> {
        (self.build)(beta, parents, u_f)
    }
}

/// Number of uniforms drawn per node for each exogenous family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NoiseArity {
    pub beta: usize,
    pub f: usize,
    pub v: usize,
}

impl Default for NoiseArity {
    fn default() -> Self {
        Self { beta: 1, f: 1, v: 1 }
    }
}

#[derive(Clone)]
pub struct PoscmSpec {
    pub name: String,
    n: usize,
    order: Vec<usize>,
    rank: Vec<usize>,
    pub context_domain: Vec<Domain>,
    pub value_domain: Vec<Domain>,
    pub alpha: StructureKernel,
    pub phi: Vec<ContextMechanism>,
    pub gamma: Vec<MechanismOperator>,
    pub noise: Vec<NoiseArity>,
}

impl fmt::Debug for PoscmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PoscmSpec")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("order", &self.order)
            .finish_non_exhaustive()
    }
}

impl PoscmSpec {
    pub fn builder(n: usize) -> SpecBuilder {
        SpecBuilder::new(n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Nodes in generation order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn rank(&self, node: usize) -> usize {
        self.rank[node]
    }

    /// Nodes preceding `i` in generation order, in that order.
    pub fn potential_parents(&self, i: usize) -> &[usize] {
        &self.order[..self.rank[i]]
    }

    pub fn is_potential_edge(&self, j: usize, i: usize) -> bool {
        j < self.n && i < self.n && self.rank[j] < self.rank[i]
    }

    pub fn check_node(&self, node: usize) -> Result<()> {
        if node < self.n {
            Ok(())
        } else {
            Err(PoscmError::NodeOutOfRange { node, n: self.n })
        }
    }

    pub fn check_dyad(&self, j: usize, i: usize) -> Result<()> {
        self.check_node(j)?;
        self.check_node(i)?;
        if self.is_potential_edge(j, i) {
            Ok(())
        } else {
            Err(PoscmError::InvalidDyad { source_node: j, target: i })
        }
    }

    pub fn is_message_augmented(&self, node: usize, channel: Channel) -> bool {
        match channel {
            Channel::Context => self.phi[node].is_message_form(),
            Channel::Value => self.gamma[node].message_form,
        }
    }

    /// Same spec with a different generation order (must stay valid).
    pub fn with_order(mut self, order: Vec<usize>) -> Result<Self> {
        self.rank = ranks(&order, self.n)?;
        self.order = order;
        Ok(self)
    }

    /// Replaces the per-node mechanisms with gated-message implementations.
    /// Every node must supply both channels.
    pub fn with_messages(mut self, params: Vec<MessageParam>) -> Result<Self> {
        if params.len() != self.n {
            return Err(PoscmError::InvalidSpec(format!(
                "message parameterization covers {} of {} nodes",
                params.len(),
                self.n
            )));
        }
        for (node, p) in params.into_iter().enumerate() {
            let context = p.context.ok_or(PoscmError::MissingChannel { node, channel: "context" })?;
            let value = p.value.ok_or(PoscmError::MissingChannel { node, channel: "value" })?;
            self.phi[node] = ContextMechanism::Messages(context);
            self.gamma[node] = value;
        }
        Ok(self)
    }
}

/// Per-node message parameterization consumed by [`PoscmSpec::with_messages`].
#[derive(Clone, Default)]
pub struct MessageParam {
    pub context: Option<MessageMechanism>,
    pub value: Option<MechanismOperator>,
}

impl MessageParam {
    pub fn new(context: MessageMechanism, value: MechanismOperator) -> Self {
        Self { context: Some(context), value: Some(value) }
    }
}

fn ranks(order: &[usize], n: usize) -> Result<Vec<usize>> {
    if order.len() != n {
        return Err(PoscmError::InvalidSpec(format!("order has {} entries for {n} nodes", order.len())));
    }
    let mut rank = vec![usize::MAX; n];
    for (r, &node) in order.iter().enumerate() {
        if node >= n || rank[node] != usize::MAX {
            return Err(PoscmError::InvalidSpec(format!("order {order:?} is not a permutation")));
        }
        rank[node] = r;
    }
    Ok(rank)
}

pub struct SpecBuilder {
    name: String,
    n: usize,
    order: Vec<usize>,
    context_domain: Vec<Domain>,
    value_domain: Vec<Domain>,
    alpha: StructureKernel,
    phi: Vec<Option<ContextMechanism>>,
    gamma: Vec<Option<MechanismOperator>>,
    noise: Vec<NoiseArity>,
}

impl SpecBuilder {
    /// Defaults: identity order, degenerate contexts, binary values, no edges.
    pub fn new(n: usize) -> Self {
        Self {
            name: String::from("poscm"),
            n,
            order: (0..n).collect(),
            context_domain: vec![Domain::degenerate(); n],
            value_domain: vec![Domain::binary(); n],
            alpha: StructureKernel::constant(0.0),
            phi: vec![None; n],
            gamma: vec![None; n],
            noise: vec![NoiseArity::default(); n],
        }
    }

    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn order(mut self, order: Vec<usize>) -> Self {
        self.order = order;
        self
    }

    pub fn context_domain(mut self, node: usize, d: Domain) -> Self {
        self.context_domain[node] = d;
        self
    }

    pub fn value_domain(mut self, node: usize, d: Domain) -> Self {
        self.value_domain[node] = d;
        self
    }

    pub fn all_value_domains(mut self, d: Domain) -> Self {
        self.value_domain = vec![d; self.n];
        self
    }

    pub fn all_context_domains(mut self, d: Domain) -> Self {
        self.context_domain = vec![d; self.n];
        self
    }

    pub fn alpha(mut self, alpha: StructureKernel) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn context(mut self, node: usize, phi: ContextMechanism) -> Self {
        self.phi[node] = Some(phi);
        self
    }

    pub fn mechanism(mut self, node: usize, gamma: MechanismOperator) -> Self {
        self.gamma[node] = Some(gamma);
        self
    }

    pub fn noise_arity(mut self, node: usize, arity: NoiseArity) -> Self {
        self.noise[node] = arity;
        self
    }

    pub fn build(self) -> Result<PoscmSpec> {
        let n = self.n;
        if n == 0 {
            return Err(PoscmError::InvalidSpec("a model needs at least one node".into()));
        }
        let rank = ranks(&self.order, n)?;
        for d in self.context_domain.iter().chain(&self.value_domain) {
            d.validate()?;
        }
        let mut phi = Vec::with_capacity(n);
        for (i, p) in self.phi.into_iter().enumerate() {
            phi.push(p.unwrap_or_else(|| {
                let d = self.context_domain[i].clone();
                ContextMechanism::uniform(d)
            }));
        }
        let mut gamma = Vec::with_capacity(n);
        for (i, g) in self.gamma.into_iter().enumerate() {
            gamma.push(g.ok_or_else(|| PoscmError::InvalidSpec(format!("node {i} has no mechanism operator")))?);
        }
        for (i, a) in self.noise.iter().enumerate() {
            if a.beta == 0 || a.f == 0 || a.v == 0 {
                return Err(PoscmError::InvalidSpec(format!("node {i} has zero noise arity")));
            }
        }
        Ok(PoscmSpec {
            name: self.name,
            n,
            order: self.order,
            rank,
            context_domain: self.context_domain,
            value_domain: self.value_domain,
            alpha: self.alpha,
            phi,
            gamma,
            noise: self.noise,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trivial(n: usize) -> SpecBuilder {
        let mut b = PoscmSpec::builder(n);
        for i in 0..n {
            b = b.mechanism(i, MechanismOperator::fixed_direct(|_, u| f64::from(u[0] < 0.5)));
        }
        b
    }

    #[test]
    fn order_must_be_a_permutation() {
        assert!(trivial(3).order(vec![0, 0, 1]).build().is_err());
        assert!(trivial(3).order(vec![0, 1]).build().is_err());
        let s = trivial(3).order(vec![2, 0, 1]).build().unwrap();
        assert_eq!(s.potential_parents(1), &[2, 0]);
        assert!(s.is_potential_edge(2, 0));
        assert!(!s.is_potential_edge(0, 2));
        assert!(s.check_dyad(1, 0).is_err());
    }

    #[test]
    fn missing_operator_is_rejected() {
        assert!(PoscmSpec::builder(2).build().is_err());
    }

    #[test]
    fn categorical_prior_inverts_the_cdf() {
        let ContextMechanism::Direct(f) = ContextMechanism::categorical(vec![1.0, 3.0]).unwrap() else {
            unreachable!()
        };
        assert_eq!(f(&[], &[0.2]), 0.0);
        assert_eq!(f(&[], &[0.3]), 1.0);
        assert!(ContextMechanism::categorical(vec![]).is_err());
    }

    #[test]
    fn message_parameterization_must_cover_every_channel() {
        let s = trivial(2).build().unwrap();
        let mech = MessageMechanism::new(1, |_, x| vec![x], |mm, _| mm.sum()[0]);
        let full = MessageParam::new(mech.clone(), MechanismOperator::fixed_messages(mech.clone()));
        let partial = MessageParam { context: Some(mech), value: None };
        let err = s.clone().with_messages(vec![full.clone(), partial]).err().unwrap();
        assert_eq!(err, PoscmError::MissingChannel { node: 1, channel: "value" });
        let m = s.with_messages(vec![full.clone(), full]).unwrap();
        assert!(m.is_message_augmented(1, Channel::Value));
        assert!(m.is_message_augmented(0, Channel::Context));
    }
}
