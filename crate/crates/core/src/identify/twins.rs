//! Constructive twins: context reparameterizations and the calibrated
//! two-node confounding pair.

use std::fmt;
use std::sync::Arc;

use crate::domain::Domain;
use crate::error::{PoscmError, Result};
use crate::messages::MessageMechanism;
use crate::models::zoo::two_node_confounding;
use crate::spec::{ContextMechanism, MechanismOperator, PoscmSpec, StructureKernel};

pub type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Bijection `gamma` on a context domain together with its inverse.
#[derive(Clone)]
pub enum ContextMap {
    /// Label `k` becomes label `perm[k]`; the label list is unchanged.
    LabelPermutation(Vec<usize>),
    Affine { scale: f64, shift: f64 },
    /// Strictly increasing interpolation through `knots`.
    PiecewiseLinear { knots: Vec<(f64, f64)> },
    Custom { name: String, forward: ScalarMap, inverse: ScalarMap },
}

impl fmt::Debug for ContextMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextMap::LabelPermutation(p) => write!(f, "LabelPermutation({p:?})"),
            ContextMap::Affine { scale, shift } => write!(f, "Affine({scale} b + {shift})"),
            ContextMap::PiecewiseLinear { knots } => write!(f, "PiecewiseLinear({knots:?})"),
            ContextMap::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

fn interpolate(knots: &[(f64, f64)], x: f64, inverse: bool) -> f64 {
    let pick = |k: &(f64, f64)| if inverse { (k.1, k.0) } else { *k };
    let last = knots.len() - 1;
    let seg = (0..last).find(|s| x <= pick(&knots[s + 1]).0).unwrap_or(last - 1);
    let (x0, y0) = pick(&knots[seg]);
    let (x1, y1) = pick(&knots[seg + 1]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

impl ContextMap {
    pub fn swap(a: usize, b: usize, k: usize) -> Self {
        let mut p: Vec<usize> = (0..k).collect();
        p.swap(a, b);
        ContextMap::LabelPermutation(p)
    }

    pub fn custom(
        name: impl Into<String>,
        forward: impl Fn(f64) -> f64 + Send + Sync + 'static,
        inverse: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ContextMap::Custom { name: name.into(), forward: Arc::new(forward), inverse: Arc::new(inverse) }
    }

    pub fn forward(&self, b: f64) -> f64 {
        match self {
            ContextMap::LabelPermutation(p) => p[b as usize] as f64,
            ContextMap::Affine { scale, shift } => scale * b + shift,
            ContextMap::PiecewiseLinear { knots } => interpolate(knots, b, false),
            ContextMap::Custom { forward, .. } => forward(b),
        }
    }

    pub fn inverse(&self, b: f64) -> f64 {
        match self {
            ContextMap::LabelPermutation(p) => p.iter().position(|x| *x == b as usize).expect("label in range") as f64,
            ContextMap::Affine { scale, shift } => (b - shift) / scale,
            ContextMap::PiecewiseLinear { knots } => interpolate(knots, b, true),
            ContextMap::Custom { inverse, .. } => inverse(b),
        }
    }

    /// Image of `domain`; errors when the map does not fit the domain kind.
    pub fn map_domain(&self, domain: &Domain) -> Result<Domain> {
        let mismatch = || PoscmError::InvalidDomain(format!("{self:?} does not act on {domain:?}"));
        match (self, domain) {
            (ContextMap::LabelPermutation(p), Domain::Finite(labels)) => {
                let mut sorted = p.clone();
                sorted.sort_unstable();
                if sorted != (0..labels.len()).collect::<Vec<_>>() {
                    return Err(mismatch());
                }
                Ok(domain.clone())
            }
            (ContextMap::Custom { .. }, Domain::Finite(labels)) => {
                let k = labels.len();
                let image: Vec<f64> = (0..k).map(|b| self.forward(b as f64)).collect();
                let mut idx: Vec<usize> = Vec::with_capacity(k);
                for (b, y) in image.iter().enumerate() {
                    if y.fract() != 0.0 || *y < 0.0 || *y >= k as f64 || self.inverse(*y) != b as f64 {
                        return Err(mismatch());
                    }
                    idx.push(*y as usize);
                }
                idx.sort_unstable();
                idx.dedup();
                if idx.len() != k {
                    return Err(mismatch());
                }
                Ok(domain.clone())
            }
            (ContextMap::Affine { scale, .. }, Domain::Interval { lo, hi }) => {
                if !(scale.is_finite() && *scale != 0.0) {
                    return Err(mismatch());
                }
                let (a, b) = (self.forward(*lo), self.forward(*hi));
                Domain::interval(a.min(b), a.max(b))
            }
            (ContextMap::PiecewiseLinear { knots }, Domain::Interval { lo, hi }) => {
                let increasing = knots.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1);
                if knots.len() < 2 || !increasing || knots[0].0 > *lo || knots[knots.len() - 1].0 < *hi {
                    return Err(mismatch());
                }
                Domain::interval(self.forward(*lo), self.forward(*hi))
            }
            (ContextMap::Custom { .. }, Domain::Interval { lo, hi }) => {
                let (a, b) = (self.forward(*lo), self.forward(*hi));
                Domain::interval(a.min(b), a.max(b))
            }
            _ => Err(mismatch()),
        }
    }
}

/// Twin with every context relabelled by `gamma` (same map on every node).
pub fn reparameterize_context(spec: &PoscmSpec, gamma: &ContextMap) -> Result<PoscmSpec> {
    reparameterize_contexts(spec, &vec![Some(gamma.clone()); spec.n()])
}

/// Twin with node `i`'s context relabelled by `maps[i]` (identity when
/// `None`): the root priors are pushed forward, edge probabilities and
/// mechanism assignment read `gamma^{-1}` of the new context, and context
/// mechanisms become `gamma_i o phi_i o gamma^{-1}` on parents.
pub fn reparameterize_contexts(spec: &PoscmSpec, maps: &[Option<ContextMap>]) -> Result<PoscmSpec> {
    let n = spec.n();
    if maps.len() != n {
        return Err(PoscmError::InvalidParameter(format!("{} context maps for {n} nodes", maps.len())));
    }
    let mut twin = spec.clone();
    for (i, m) in maps.iter().enumerate() {
        if let Some(g) = m {
            twin.context_domain[i] = g.map_domain(&spec.context_domain[i])?;
        }
    }
    let maps: Arc<Vec<Option<ContextMap>>> = Arc::new(maps.to_vec());
    let inv = {
        let maps = Arc::clone(&maps);
        move |node: usize, b: f64| maps[node].as_ref().map_or(b, |g| g.inverse(b))
    };
    let fwd = {
        let maps = Arc::clone(&maps);
        move |node: usize, b: f64| maps[node].as_ref().map_or(b, |g| g.forward(b))
    };

    let edge = Arc::clone(&spec.alpha.edge_prob);
    let inv_a = inv.clone();
    let mut alpha = StructureKernel::product(move |j, i, b| edge(j, i, inv_a(j, b)));
    if let Some(rows) = spec.alpha.row_sampler.clone() {
        let inv_r = inv.clone();
        alpha = alpha.with_row_sampler(move |j, b, targets, u| rows(j, inv_r(j, b), targets, u));
    }
    twin.alpha = alpha;

    for i in 0..n {
        let (inv, fwd) = (inv.clone(), fwd.clone());
        twin.phi[i] = match &spec.phi[i] {
            ContextMechanism::Direct(f) => {
                let f = Arc::clone(f);
                ContextMechanism::direct(move |pv, u| {
                    let original: Vec<(usize, f64)> = pv.iter().map(|(k, b)| (*k, inv(*k, *b))).collect();
                    fwd(i, f(&original, u))
                })
            }
            ContextMechanism::Messages(m) => {
                let (h, agg) = (Arc::clone(&m.h), Arc::clone(&m.aggregate));
                ContextMechanism::Messages(MessageMechanism::new(
                    m.dim,
                    move |src, b| h(src, inv(src, b)),
                    move |mm, u| fwd(i, agg(mm, u)),
                ))
            }
        };
        let build = Arc::clone(&spec.gamma[i].build);
        let inv_g = inv_for(&maps, i);
        twin.gamma[i] = MechanismOperator::new(spec.gamma[i].message_form, move |b, parents, u_f| {
            build(inv_g(b), parents, u_f)
        });
    }
    twin.name = format!("{}-reparameterized", spec.name);
    Ok(twin)
}

fn inv_for(maps: &Arc<Vec<Option<ContextMap>>>, node: usize) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
    let g = maps[node].clone();
    move |b| g.as_ref().map_or(b, |g| g.inverse(b))
}

/// Solves `(1 - p')/2 + p' q'_v = (1 - p)/2 + p q_v` for `q'_v`.
pub fn calibrated_q(p: f64, q: f64, p_prime: f64) -> f64 {
    ((1.0 - p) / 2.0 + p * q - (1.0 - p_prime) / 2.0) / p_prime
}

/// The pair `(M, M')` of two-node models with equal node-level kernels but
/// different edge probabilities.
pub fn calibrated_confounding_pair(p: f64, q0: f64, q1: f64, p_prime: f64) -> Result<(PoscmSpec, PoscmSpec)> {
    if !(p_prime > 0.0 && p_prime <= 1.0) {
        return Err(PoscmError::InvalidParameter(format!("p' = {p_prime} outside (0, 1]")));
    }
    let (r0, r1) = (calibrated_q(p, q0, p_prime), calibrated_q(p, q1, p_prime));
    for (v, r) in [(0, r0), (1, r1)] {
        if !(r > 0.0 && r < 1.0) {
            return Err(PoscmError::InvalidParameter(format!("calibrated q'_{v} = {r} outside (0, 1)")));
        }
    }
    Ok((two_node_confounding(p, q0, q1)?, two_node_confounding(p_prime, r0, r1)?))
}
