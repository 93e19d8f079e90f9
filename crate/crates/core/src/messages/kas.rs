//! Fixed-dimension sum-of-univariates forms.
//!
//! A node with `m` potential parents is written as
//!
//! ```text
//! x_i = sum_{q=0}^{2m} Psi( q + sum_j A_ji * lambda_j * psi(x_j + eta*q) + lambda_u * psi(u + eta*q) )
//! ```
//!
//! which induces per-dyad messages `[H_j(x)]^q = lambda_j * psi(x + eta*q)` of
//! dimension `2m + 1`. Outer and inner functions are supplied by the caller
//! from [`Univariate`]; no universal inner function is constructed.

use serde::{Deserialize, Serialize};

use super::{Aggregator, Channel, EdgeMessageFn, MessageMatrix, MessageMechanism};
use crate::error::{PoscmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Univariate {
    Identity,
    Tanh {
        #[serde(default = "one")]
        scale: f64,
    },
    Sin {
        #[serde(default = "one")]
        freq: f64,
    },
    /// Linear interpolation through `knots` (sorted by x), extended flat outside.
    PiecewiseLinear { knots: Vec<(f64, f64)> },
}

fn one() -> f64 {
    1.0
}

impl Univariate {
    pub fn tanh() -> Self {
        Univariate::Tanh { scale: 1.0 }
    }

    pub fn sin() -> Self {
        Univariate::Sin { freq: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if let Univariate::PiecewiseLinear { knots } = self {
            if knots.len() < 2 || knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(PoscmError::InvalidParameter(
                    "piecewise-linear needs >= 2 knots with increasing x".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Univariate::Identity => x,
            Univariate::Tanh { scale } => (scale * x).tanh(),
            Univariate::Sin { freq } => (freq * x).sin(),
            Univariate::PiecewiseLinear { knots } => piecewise(knots, x),
        }
    }
}

pub(crate) fn piecewise(knots: &[(f64, f64)], x: f64) -> f64 {
    let (x0, y0) = knots[0];
    let (xn, yn) = knots[knots.len() - 1];
    if x <= x0 {
        return y0;
    }
    if x >= xn {
        return yn;
    }
    let k = knots.partition_point(|(kx, _)| *kx <= x);
    let (xa, ya) = knots[k - 1];
    let (xb, yb) = knots[k];
    ya + (yb - ya) * (x - xa) / (xb - xa)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KasForm {
    pub outer: Univariate,
    pub inner: Univariate,
    pub eta: f64,
    /// `(source node, lambda)` for every potential parent, in generation order.
    pub lambdas: Vec<(usize, f64)>,
    pub lambda_u: f64,
}

impl KasForm {
    pub fn potential_parents(&self) -> usize {
        self.lambdas.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.lambdas.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        self.outer.validate()?;
        self.inner.validate()
    }

    fn message(&self, lambda: f64, x: f64) -> Vec<f64> {
        (0..self.dim())
            .map(|q| lambda * self.inner.eval(x + self.eta * q as f64))
            .collect()
    }

    fn aggregate(&self, mm: &MessageMatrix, u: f64) -> f64 {
        let sums = mm.sum();
        sums.iter()
            .enumerate()
            .map(|(q, s)| {
                let qf = q as f64;
                self.outer.eval(qf + s + self.lambda_u * self.inner.eval(u + self.eta * qf))
            })
            .sum()
    }

    /// Message-form mechanism; sources outside `lambdas` receive zero weight.
    pub fn to_mechanism(&self) -> MessageMechanism {
        let h_form = self.clone();
        let a_form = self.clone();
        MessageMechanism::new(
            self.dim(),
            move |src, x| {
                let lambda = h_form.lambdas.iter().find(|(s, _)| *s == src).map_or(0.0, |(_, l)| *l);
                h_form.message(lambda, x)
            },
            move |mm, u| a_form.aggregate(mm, u.first().copied().unwrap_or(0.5)),
        )
    }
}

/// Direct evaluation of the fixed-dimension sum. `present[k]` and
/// `parent_values[k]` align with `form.lambdas[k]`; values of absent parents
/// are ignored.
pub fn kas_eval_direct(form: &KasForm, present: &[bool], parent_values: &[f64], u: f64) -> Result<f64> {
    let m = form.potential_parents();
    if present.len() != m || parent_values.len() != m {
        return Err(PoscmError::InvalidParameter(format!(
            "expected {m} adjacency flags and parent values, got {} and {}",
            present.len(),
            parent_values.len()
        )));
    }
    let mut total = 0.0;
    for q in 0..=2 * m {
        let qf = q as f64;
        let mut arg = qf + form.lambda_u * form.inner.eval(u + form.eta * qf);
        for k in 0..m {
            if present[k] {
                arg += form.lambdas[k].1 * form.inner.eval(parent_values[k] + form.eta * qf);
            }
        }
        total += form.outer.eval(arg);
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(PoscmError::InvalidParameter("non-finite univariate evaluation".into()))
    }
}

/// Splits a form into its per-dyad message functions and aggregator.
pub fn kas_to_messages(form: &KasForm, target: usize) -> (Vec<EdgeMessageFn>, Aggregator) {
    let mech = form.to_mechanism();
    let edges = form
        .lambdas
        .iter()
        .map(|(src, _)| mech.edge_fn(target, *src, Channel::Value))
        .collect();
    (edges, mech.aggregator(target, Channel::Value))
}

/// `sign(y) * min(|y|, bound)`.
pub fn clip(y: f64, bound: f64) -> f64 {
    y.signum() * y.abs().min(bound)
}

/// Affine map of the cube `[-r, r]^n` onto `[0, 1]^n`.
pub fn cube_to_unit(x: &[f64], r: f64) -> Vec<f64> {
    x.iter().map(|v| (v + r) / (2.0 * r)).collect()
}

pub fn cube_from_unit(u: &[f64], r: f64) -> Vec<f64> {
    u.iter().map(|v| 2.0 * r * v - r).collect()
}

/// Restricts `f` to the cube `[-r, r]^n`, zero outside.
pub fn restrict_to_cube(f: impl Fn(&[f64]) -> f64, r: f64) -> impl Fn(&[f64]) -> f64 {
    move |x| if x.iter().all(|v| v.abs() <= r) { f(x) } else { 0.0 }
}
