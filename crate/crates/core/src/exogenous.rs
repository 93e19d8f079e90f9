use crate::rng::{tag, KeyedStream};
use crate::spec::PoscmSpec;

/// Frozen exogenous randomness of one replicate.
///
/// Every family is read from its own keyed stream `(seed, tag, replicate)` in
/// a fixed layout determined by the spec shape, so a draw can be rebuilt bit
/// for bit from its key.
#[derive(Debug, Clone)]
pub struct ExogenousDraw {
    pub seed: u64,
    pub replicate: u64,
    n: usize,
    u_a: Vec<f64>,
    u_beta: Noise,
    u_f: Noise,
    u_v: Noise,
}

/// Per-node noise vectors stored back to back.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Noise {
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl Noise {
    fn draw(arity: impl Iterator<Item = usize>, stream: &mut KeyedStream) -> Self {
        let mut offsets = vec![0];
        for a in arity {
            offsets.push(offsets.last().unwrap() + a);
        }
        let values = stream.uniforms(*offsets.last().unwrap());
        Self { offsets, values }
    }

    pub(crate) fn get(&self, i: usize) -> &[f64] {
        &self.values[self.offsets[i]..self.offsets[i + 1]]
    }
}

pub fn sample_exogenous(spec: &PoscmSpec, seed: u64, replicate: u64) -> ExogenousDraw {
    let n = spec.n();
    let order = spec.order();
    let mut edges = KeyedStream::new(seed, tag::EDGE, replicate, 0, 0);
    let mut u_a = vec![f64::NAN; n * n];
    for (ri, &i) in order.iter().enumerate() {
        for &j in &order[..ri] {
            u_a[j * n + i] = edges.uniform();
        }
    }
    let arity = &spec.noise;
    ExogenousDraw {
        seed,
        replicate,
        n,
        u_a,
        u_beta: Noise::draw(
            arity.iter().map(|a| a.beta),
            &mut KeyedStream::new(seed, tag::CONTEXT, replicate, 0, 0),
        ),
        u_f: Noise::draw(
            arity.iter().map(|a| a.f),
            &mut KeyedStream::new(seed, tag::MECHANISM, replicate, 0, 0),
        ),
        u_v: Noise::draw(
            arity.iter().map(|a| a.v),
            &mut KeyedStream::new(seed, tag::VALUE, replicate, 0, 0),
        ),
    }
}

/// Bitwise equality; the NaN placeholders of non-dyads compare equal.
impl PartialEq for ExogenousDraw {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.replicate == other.replicate
            && self.n == other.n
            && self.u_a.len() == other.u_a.len()
            && self.u_a.iter().zip(&other.u_a).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.u_beta == other.u_beta
            && self.u_f == other.u_f
            && self.u_v == other.u_v
    }
}

impl ExogenousDraw {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `U^A_ji`; NaN when `j -> i` is not a potential dyad.
    pub fn u_a(&self, j: usize, i: usize) -> f64 {
        self.u_a[j * self.n + i]
    }

    pub fn u_beta(&self, i: usize) -> &[f64] {
        self.u_beta.get(i)
    }

    pub fn u_f(&self, i: usize) -> &[f64] {
        self.u_f.get(i)
    }

    pub fn u_v(&self, i: usize) -> &[f64] {
        self.u_v.get(i)
    }

    pub(crate) fn value_noise(&self) -> &Noise {
        &self.u_v
    }

    /// `U^V` alone, redrawn from the keyed stream `(seed, tag, a, b)`.
    pub(crate) fn fresh_value_noise(&self, seed: u64, tag: u64, a: u64, b: u64) -> Noise {
        let mut stream = KeyedStream::new(seed, tag, a, b, 0);
        Noise { offsets: self.u_v.offsets.clone(), values: stream.uniforms(self.u_v.values.len()) }
    }

    /// Copy with `U^V` redrawn from the keyed stream `(seed, tag, a, b)`;
    /// the Phase-I families are shared.
    pub fn with_fresh_values(&self, seed: u64, tag: u64, a: u64, b: u64) -> Self {
        Self { u_v: self.fresh_value_noise(seed, tag, a, b), ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{MechanismOperator, NoiseArity};

    fn spec(n: usize) -> PoscmSpec {
        let mut b = PoscmSpec::builder(n);
        for i in 0..n {
            b = b.mechanism(i, MechanismOperator::fixed_direct(|_, u| u[0]));
        }
        b.noise_arity(0, NoiseArity { beta: 1, f: 2, v: 3 }).build().unwrap()
    }

    #[test]
    fn draws_are_deterministic_and_vary_with_replicate() {
        let s = spec(2);
        let a = sample_exogenous(&s, 7, 0);
        assert_eq!(a, sample_exogenous(&s, 7, 0));
        let b = sample_exogenous(&s, 7, 1);
        assert_ne!(a.u_a(0, 1), b.u_a(0, 1));
        for i in 0..2 {
            assert_ne!(a.u_beta(i), b.u_beta(i));
            assert_ne!(a.u_f(i), b.u_f(i));
            assert_ne!(a.u_v(i), b.u_v(i));
        }
        assert!(a.u_a(1, 0).is_nan());
    }

    #[test]
    fn arity_overrides_shape_the_store() {
        let d = sample_exogenous(&spec(3), 1, 0);
        assert_eq!(d.u_f(0).len(), 2);
        assert_eq!(d.u_v(0).len(), 3);
        assert_eq!(d.u_v(2).len(), 1);
    }

    #[test]
    fn edge_uniforms_have_mean_one_half() {
        let s = spec(2);
        let n = 100_000;
        let mean = (0..n).map(|r| sample_exogenous(&s, 11, r).u_a(0, 1)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn fresh_values_keep_phase_one_noise() {
        let d = sample_exogenous(&spec(3), 3, 4);
        let e = d.with_fresh_values(3, tag::PROBE, 0, 1);
        assert_eq!(d.u_a(0, 2), e.u_a(0, 2));
        assert_eq!(d.u_f(1), e.u_f(1));
        assert_ne!(d.u_v(1), e.u_v(1));
    }
}
