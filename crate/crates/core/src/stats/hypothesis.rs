use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use super::{ks_test, EmpiricalLaw};
use crate::error::{PoscmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ks,
    MmdPermutation,
    /// Fisher's exact test on two binomial samples.
    Binomial,
    ChiSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoSampleResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Two-sided Fisher exact test on the table `[[a, b], [c, d]]`: the sum of
/// hypergeometric probabilities no larger than that of the observed table.
pub fn fisher_exact(a: usize, b: usize, c: usize, d: usize) -> f64 {
    let (r1, r2, c1) = (a + b, c + d, a + c);
    let n = r1 + r2;
    let lo = c1.saturating_sub(r2);
    let hi = c1.min(r1);
    let denom = ln_choose(n, c1);
    let logp = |k: usize| ln_choose(r1, k) + ln_choose(r2, c1 - k) - denom;
    let observed = logp(a);
    let mut p = 0.0;
    for k in lo..=hi {
        let lk = logp(k);
        if lk <= observed + 1e-7 * observed.abs().max(1.0) {
            p += lk.exp();
        }
    }
    p.min(1.0)
}

/// Pearson chi-square test of homogeneity over a table of counts (rows are
/// samples). Empty columns are dropped. Returns `(statistic, p)`.
pub fn chi_square_homogeneity(table: &[Vec<usize>]) -> (f64, f64) {
    let cols = table.first().map_or(0, Vec::len);
    let keep: Vec<usize> = (0..cols).filter(|c| table.iter().any(|r| r[*c] > 0)).collect();
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let total: f64 = rows.iter().sum();
    if keep.len() < 2 || rows.iter().filter(|r| **r > 0.0).count() < 2 {
        return (0.0, 1.0);
    }
    let mut stat = 0.0;
    for c in &keep {
        let col: f64 = table.iter().map(|r| r[*c] as f64).sum();
        for (r, row_total) in table.iter().zip(&rows) {
            let e = row_total * col / total;
            if e > 0.0 {
                stat += (r[*c] as f64 - e).powi(2) / e;
            }
        }
    }
    let nonempty_rows = rows.iter().filter(|r| **r > 0.0).count();
    let df = ((keep.len() - 1) * (nonempty_rows - 1)) as f64;
    let p = ChiSquared::new(df).map(|d| d.sf(stat)).unwrap_or(1.0);
    (stat, p.clamp(0.0, 1.0))
}

pub fn bonferroni(p: &[f64]) -> Vec<f64> {
    let m = p.len() as f64;
    p.iter().map(|x| (x * m).min(1.0)).collect()
}

/// Two-sample test on label laws: Fisher's exact test for binary supports,
/// chi-square homogeneity otherwise.
pub fn label_test(x: &EmpiricalLaw, y: &EmpiricalLaw) -> Result<TwoSampleResult> {
    let (EmpiricalLaw::Labels { counts: cx, n: nx }, EmpiricalLaw::Labels { counts: cy, n: ny }) = (x, y) else {
        return Err(PoscmError::MixedKinds("label test needs label laws".into()));
    };
    let mut support: Vec<i64> = cx.keys().chain(cy.keys()).copied().collect();
    support.sort_unstable();
    support.dedup();
    let diff = super::total_variation(x, y)?;
    if support.len() <= 2 {
        let k = support[0];
        let a = *cx.get(&k).unwrap_or(&0);
        let c = *cy.get(&k).unwrap_or(&0);
        return Ok(TwoSampleResult { statistic: diff, p_value: fisher_exact(a, nx - a, c, ny - c), method: Method::Binomial });
    }
    let row = |m: &std::collections::BTreeMap<i64, usize>| support.iter().map(|s| *m.get(s).unwrap_or(&0)).collect();
    let (_, p) = chi_square_homogeneity(&[row(cx), row(cy)]);
    Ok(TwoSampleResult { statistic: diff, p_value: p, method: Method::ChiSquare })
}

/// KS for scalar laws, [`label_test`] for label laws.
pub fn two_sample(x: &EmpiricalLaw, y: &EmpiricalLaw) -> Result<TwoSampleResult> {
    match (x.is_scalar(), y.is_scalar()) {
        (true, true) => ks_test(x, y),
        (false, false) => label_test(x, y),
        _ => Err(PoscmError::MixedKinds("scalar law compared with a label law".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{tag, KeyedStream};

    #[test]
    fn fisher_reference_values() {
        // Classic tea-tasting table.
        assert!((fisher_exact(3, 1, 1, 3) - 0.4857142857).abs() < 1e-9);
        assert!((fisher_exact(1, 9, 11, 3) - 0.002759456).abs() < 1e-8);
        assert_eq!(fisher_exact(5, 5, 5, 5), 1.0);
    }

    #[test]
    fn chi_square_reference_value() {
        // 2x3 table: df 2, where the chi-square survival function is exp(-x/2).
        let (s, p) = chi_square_homogeneity(&[vec![10, 20, 30], vec![12, 18, 33]]);
        let expected = {
            let t = [[10.0, 20.0, 30.0], [12.0, 18.0, 33.0]];
            let rows = [60.0, 63.0];
            let cols = [22.0, 38.0, 63.0];
            let mut x = 0.0;
            for r in 0..2 {
                for c in 0..3 {
                    let e = rows[r] * cols[c] / 123.0;
                    x += (t[r][c] - e) * (t[r][c] - e) / e;
                }
            }
            x
        };
        assert!((s - expected).abs() < 1e-12);
        assert!((p - (-s / 2.0).exp()).abs() < 1e-9);
        assert_eq!(chi_square_homogeneity(&[vec![5, 0], vec![7, 0]]), (0.0, 1.0));
    }

    #[test]
    fn bonferroni_caps_at_one() {
        assert_eq!(bonferroni(&[0.01, 0.5]), vec![0.02, 1.0]);
    }

    #[test]
    fn binomial_test_size() {
        let rejections = (0..200)
            .filter(|t| {
                let mut s = KeyedStream::new(9, tag::TEST, *t, 0, 0);
                let a = EmpiricalLaw::labels((0..200).map(|_| i64::from(s.uniform() < 0.3))).unwrap();
                let b = EmpiricalLaw::labels((0..200).map(|_| i64::from(s.uniform() < 0.3))).unwrap();
                two_sample(&a, &b).unwrap().p_value < 0.05
            })
            .count();
        assert!(rejections <= 16, "{rejections}");
    }

    #[test]
    fn mixed_kinds_are_rejected() {
        let a = EmpiricalLaw::labels([0, 1]).unwrap();
        let b = EmpiricalLaw::scalar(vec![0.0; 10]).unwrap();
        assert!(matches!(two_sample(&a, &b), Err(PoscmError::MixedKinds(_))));
    }
}
