use super::{EmpiricalLaw, Method, TwoSampleResult};
use crate::error::{PoscmError, Result};

/// `sup_r |F_x(r) - F_y(r)|` over the pooled order statistics of two sorted samples.
pub fn ks_statistic(x: &[f64], y: &[f64]) -> f64 {
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let r = x[i].min(y[j]);
        while i < x.len() && x[i] <= r {
            i += 1;
        }
        while j < y.len() && y[j] <= r {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Survival function of the Kolmogorov distribution, `P(K > z)`.
pub fn kolmogorov_q(z: f64) -> f64 {
    if z < 0.042 {
        return 1.0;
    }
    if z < 1.18 {
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * z * z)).exp();
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / z * (y + y.powi(9) + y.powi(25) + y.powi(49));
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let x = (-2.0 * z * z).exp();
        (2.0 * (x - x.powi(4) + x.powi(9))).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// `Q((sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) * D)`, `ne = nm / (n + m)`.
pub fn ks_test(x: &EmpiricalLaw, y: &EmpiricalLaw) -> Result<TwoSampleResult> {
    let (EmpiricalLaw::Scalar { sorted: a }, EmpiricalLaw::Scalar { sorted: b }) = (x, y) else {
        return Err(PoscmError::MixedKinds("KS test needs scalar laws".into()));
    };
    if a.len() < 5 || b.len() < 5 {
        return Err(PoscmError::InsufficientSamples(format!("KS with {} and {} samples", a.len(), b.len())));
    }
    let d = ks_statistic(a, b);
    let en = (a.len() as f64 * b.len() as f64 / (a.len() + b.len()) as f64).sqrt();
    let p = if d == 0.0 { 1.0 } else { kolmogorov_q((en + 0.12 + 0.11 / en) * d) };
    Ok(TwoSampleResult { statistic: d, p_value: p, method: Method::Ks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{tag, KeyedStream};
    use proptest::prelude::*;

    fn law(v: Vec<f64>) -> EmpiricalLaw {
        EmpiricalLaw::scalar(v).unwrap()
    }

    /// Brute-force sup over every pooled point, for comparison.
    fn oracle(x: &[f64], y: &[f64]) -> f64 {
        let cdf = |s: &[f64], r: f64| s.iter().filter(|v| **v <= r).count() as f64 / s.len() as f64;
        x.iter().chain(y).map(|r| (cdf(x, *r) - cdf(y, *r)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn identical_samples() {
        let x = law(vec![1.0, 2.0, 2.0, 3.0, 5.0]);
        let r = ks_test(&x, &x).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn shifted_uniforms() {
        let mut s = KeyedStream::new(2, tag::TEST, 0, 0, 0);
        let x = law(s.uniforms(1000));
        let y = law(s.uniforms(1000).into_iter().map(|u| u + 0.5).collect());
        let r = ks_test(&x, &y).unwrap();
        assert!((r.statistic - 0.5).abs() < 0.05, "{}", r.statistic);
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn q_matches_reference_points() {
        // Kolmogorov survival function at tabulated points.
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_q(1.6276) - 0.01).abs() < 1e-3);
        assert!((kolmogorov_q(0.8276) - 0.5).abs() < 2e-3);
        assert_eq!(kolmogorov_q(0.0), 1.0);
    }

    #[test]
    fn size_is_calibrated() {
        let rejections = (0..200)
            .filter(|t| {
                let mut s = KeyedStream::new(3, tag::TEST, *t, 0, 0);
                ks_test(&law(s.uniforms(200)), &law(s.uniforms(200))).unwrap().p_value < 0.05
            })
            .count();
        assert!(rejections <= 16, "{rejections}");
    }

    #[test]
    fn rejects_mixed_and_tiny() {
        let l = EmpiricalLaw::labels([0, 1, 1, 0, 1]).unwrap();
        assert!(matches!(ks_test(&l, &l), Err(PoscmError::MixedKinds(_))));
        let t = law(vec![1.0, 2.0]);
        assert!(ks_test(&t, &t).is_err());
    }

    proptest! {
        #[test]
        fn statistic_is_symmetric_bounded_and_exact(
            x in prop::collection::vec(-5i32..5, 5..40),
            y in prop::collection::vec(-5i32..5, 5..40),
        ) {
            let xs = law(x.iter().map(|v| f64::from(*v)).collect());
            let ys = law(y.iter().map(|v| f64::from(*v)).collect());
            let a = ks_test(&xs, &ys).unwrap();
            let b = ks_test(&ys, &xs).unwrap();
            prop_assert_eq!(a.statistic, b.statistic);
            prop_assert!((0.0..=1.0).contains(&a.statistic));
            prop_assert!((0.0..=1.0).contains(&a.p_value));
            let (EmpiricalLaw::Scalar { sorted: sx }, EmpiricalLaw::Scalar { sorted: sy }) = (&xs, &ys) else { unreachable!() };
            prop_assert!((a.statistic - oracle(sx, sy)).abs() < 1e-12);
            prop_assert_eq!(a.statistic == 0.0, sx.iter().chain(sy).all(|r| xs.cdf(*r) == ys.cdf(*r)));
        }
    }
}
