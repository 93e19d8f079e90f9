//! Maximum mean discrepancy with a Gaussian RBF kernel.
//!
//! Samples are rows of equal dimension. The default estimator is the biased
//! V-statistic (self-pairs included); the unbiased U-statistic is available
//! for comparison.

use rayon::prelude::*;

use super::{Method, TwoSampleResult};
use crate::error::{PoscmError, Result};
use crate::rng::{tag, KeyedStream};

/// Pooled sizes up to this bound get a cached kernel matrix in permutation tests.
const CACHE_LIMIT: usize = 2500;
const MEDIAN_SUBSAMPLE: usize = 2000;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check(x: &[Vec<f64>], y: &[Vec<f64>], sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PoscmError::InvalidParameter(format!("kernel bandwidth {sigma}")));
    }
    if x.is_empty() || y.is_empty() {
        return Err(PoscmError::InsufficientSamples("MMD needs non-empty samples".into()));
    }
    let d = x[0].len();
    if x.iter().chain(y).any(|r| r.len() != d) {
        return Err(PoscmError::InvalidParameter("samples of unequal dimension".into()));
    }
    Ok(())
}

fn mean_kernel(a: &[Vec<f64>], b: &[Vec<f64>], gamma: f64, skip_diagonal: bool) -> f64 {
    let total: f64 = a
        .par_iter()
        .enumerate()
        .map(|(i, ai)| {
            b.iter()
                .enumerate()
                .filter(|(j, _)| !(skip_diagonal && i == *j))
                .map(|(_, bj)| (-gamma * sq_dist(ai, bj)).exp())
                .sum::<f64>()
        })
        .sum();
    let pairs = if skip_diagonal { a.len() * (a.len() - 1) } else { a.len() * b.len() };
    total / pairs as f64
}

/// Biased estimate `mean k(x,x') - 2 mean k(x,y) + mean k(y,y')` with
/// `k(a,b) = exp(-|a-b|^2 / (2 sigma^2))`.
pub fn mmd2(x: &[Vec<f64>], y: &[Vec<f64>], sigma: f64) -> Result<f64> {
    check(x, y, sigma)?;
    let g = 1.0 / (2.0 * sigma * sigma);
    let v = mean_kernel(x, x, g, false) - 2.0 * mean_kernel(x, y, g, false) + mean_kernel(y, y, g, false);
    Ok(v.max(0.0))
}

pub fn mmd2_unbiased(x: &[Vec<f64>], y: &[Vec<f64>], sigma: f64) -> Result<f64> {
    check(x, y, sigma)?;
    if x.len() < 2 || y.len() < 2 {
        return Err(PoscmError::InsufficientSamples("unbiased MMD needs two points per sample".into()));
    }
    let g = 1.0 / (2.0 * sigma * sigma);
    Ok(mean_kernel(x, x, g, true) - 2.0 * mean_kernel(x, y, g, false) + mean_kernel(y, y, g, true))
}

pub fn scalar_rows(x: &[f64]) -> Vec<Vec<f64>> {
    x.iter().map(|v| vec![*v]).collect()
}

/// Median pairwise Euclidean distance of the pooled sample, on an evenly
/// strided subsample of at most 2000 points. Returns 1 when every distance is zero.
pub fn median_heuristic(pooled: &[Vec<f64>]) -> Result<f64> {
    if pooled.len() < 2 {
        return Err(PoscmError::InsufficientSamples("median heuristic needs two points".into()));
    }
    let stride = pooled.len().div_ceil(MEDIAN_SUBSAMPLE);
    let pts: Vec<&Vec<f64>> = pooled.iter().step_by(stride).collect();
    let mut d: Vec<f64> = (0..pts.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let pts = &pts;
            (i + 1..pts.len()).map(move |j| sq_dist(pts[i], pts[j]).sqrt())
        })
        .collect();
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 1 {
        *d.select_nth_unstable_by(mid, f64::total_cmp).1
    } else {
        let hi = *d.select_nth_unstable_by(mid, f64::total_cmp).1;
        let lo = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    Ok(if median > 0.0 { median } else { 1.0 })
}

/// Permutation test of `H0: P_x = P_y` on the biased MMD^2, with
/// `p = (1 + #{perm >= observed}) / (B + 1)`. Permutations are keyed by `seed`.
pub fn mmd_permutation_test(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    sigma: f64,
    permutations: usize,
    seed: u64,
) -> Result<TwoSampleResult> {
    check(x, y, sigma)?;
    if permutations < 100 {
        return Err(PoscmError::InvalidParameter(format!("{permutations} permutations; at least 100")));
    }
    let observed = mmd2(x, y, sigma)?;
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let (n, total) = (x.len(), pooled.len());
    let g = 1.0 / (2.0 * sigma * sigma);
    let cache: Option<Vec<f64>> = (total <= CACHE_LIMIT).then(|| {
        let mut k = vec![0.0; total * total];
        k.par_chunks_mut(total).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (-g * sq_dist(pooled[i], pooled[j])).exp();
            }
        });
        k
    });
    let kernel = |i: usize, j: usize| match &cache {
        Some(k) => k[i * total + j],
        None => (-g * sq_dist(pooled[i], pooled[j])).exp(),
    };
    let stat = |idx: &[usize]| {
        let (a, b) = idx.split_at(n);
        let block = |p: &[usize], q: &[usize]| {
            p.iter().map(|i| q.iter().map(|j| kernel(*i, *j)).sum::<f64>()).sum::<f64>() / (p.len() * q.len()) as f64
        };
        block(a, a) - 2.0 * block(a, b) + block(b, b)
    };
    // Permuted statistics are recomputed in the same arithmetic as `stat` on
    // the identity permutation, so ties with the observed value are exact.
    let base: Vec<usize> = (0..total).collect();
    let observed_same_path = stat(&base);
    let exceed = (0..permutations as u64)
        .into_par_iter()
        .filter(|b| {
            let mut idx = base.clone();
            KeyedStream::new(seed, tag::TEST, *b, 0, 0).shuffle(&mut idx);
            stat(&idx) >= observed_same_path - 1e-14
        })
        .count();
    Ok(TwoSampleResult {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (permutations + 1) as f64,
        method: Method::MmdPermutation,
    })
}
