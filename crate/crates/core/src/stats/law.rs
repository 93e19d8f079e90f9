use std::collections::BTreeMap;

use crate::error::{PoscmError, Result};

/// Sample-based distribution: sorted reals or counts over integer labels.
#[derive(Debug, Clone, PartialEq)]
pub enum EmpiricalLaw {
    Scalar { sorted: Vec<f64> },
    Labels { counts: BTreeMap<i64, usize>, n: usize },
}

impl EmpiricalLaw {
    pub fn scalar(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(PoscmError::InsufficientSamples("empty sample".into()));
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(PoscmError::InvalidParameter("NaN in sample".into()));
        }
        samples.sort_unstable_by(f64::total_cmp);
        Ok(EmpiricalLaw::Scalar { sorted: samples })
    }

    pub fn labels(codes: impl IntoIterator<Item = i64>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        let mut n = 0;
        for c in codes {
            *counts.entry(c).or_insert(0) += 1;
            n += 1;
        }
        if n == 0 {
            return Err(PoscmError::InsufficientSamples("empty sample".into()));
        }
        Ok(EmpiricalLaw::Labels { counts, n })
    }

    /// Label law of values that are label indices of a finite domain.
    pub fn from_label_values(values: &[f64]) -> Result<Self> {
        if values.iter().any(|v| v.fract() != 0.0 || !v.is_finite()) {
            return Err(PoscmError::InvalidParameter("label values must be integral".into()));
        }
        Self::labels(values.iter().map(|v| *v as i64))
    }

    pub fn n(&self) -> usize {
        match self {
            EmpiricalLaw::Scalar { sorted } => sorted.len(),
            EmpiricalLaw::Labels { n, .. } => *n,
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, EmpiricalLaw::Scalar { .. })
    }

    /// Empirical probability of a label (0 for scalar laws).
    pub fn probability(&self, label: i64) -> f64 {
        match self {
            EmpiricalLaw::Labels { counts, n } => *counts.get(&label).unwrap_or(&0) as f64 / *n as f64,
            EmpiricalLaw::Scalar { .. } => 0.0,
        }
    }

    /// Label probabilities as a map.
    pub fn pmf(&self) -> BTreeMap<i64, f64> {
        match self {
            EmpiricalLaw::Labels { counts, n } => counts.iter().map(|(k, c)| (*k, *c as f64 / *n as f64)).collect(),
            EmpiricalLaw::Scalar { .. } => BTreeMap::new(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            EmpiricalLaw::Scalar { sorted } => sorted.iter().sum::<f64>() / sorted.len() as f64,
            EmpiricalLaw::Labels { counts, n } => {
                counts.iter().map(|(k, c)| *k as f64 * *c as f64).sum::<f64>() / *n as f64
            }
        }
    }

    /// Right-continuous empirical CDF at `x` (scalar laws).
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            EmpiricalLaw::Scalar { sorted } => sorted.partition_point(|v| *v <= x) as f64 / sorted.len() as f64,
            EmpiricalLaw::Labels { counts, n } => {
                counts.range(..=x.floor() as i64).map(|(_, c)| *c).sum::<usize>() as f64 / *n as f64
            }
        }
    }
}

/// `1/2 * sum |p - q|` over label laws.
pub fn total_variation(p: &EmpiricalLaw, q: &EmpiricalLaw) -> Result<f64> {
    if p.is_scalar() || q.is_scalar() {
        return Err(PoscmError::MixedKinds("total variation needs label laws".into()));
    }
    Ok(tv_pmf(&p.pmf(), &q.pmf()))
}

/// Total variation between two probability maps.
pub fn tv_pmf(p: &BTreeMap<i64, f64>, q: &BTreeMap<i64, f64>) -> f64 {
    let mut sum = 0.0;
    for (k, pk) in p {
        sum += (pk - q.get(k).unwrap_or(&0.0)).abs();
    }
    for (k, qk) in q {
        if !p.contains_key(k) {
            sum += qk.abs();
        }
    }
    0.5 * sum
}
