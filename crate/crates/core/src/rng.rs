//! Keyed, counter-based uniform streams.
//!
//! Every exogenous quantity in the toolkit is addressed by a key rather than
//! drawn from a shared mutable generator. A key is a 256-bit ChaCha key built
//! from `(seed, tag, a, b)` plus a 64-bit stream id; the word position inside
//! the stream is the counter. Two calls with the same key always return the
//! same bits, whatever thread or order they run in.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use statrs::distribution::{ContinuousCDF, Normal};

/// Channel tags that keep independent families of randomness apart.
pub mod tag {
    pub const EDGE: u64 = 0x4544_4745;
    pub const CONTEXT: u64 = 0x4354_5854;
    pub const MECHANISM: u64 = 0x4d45_4348;
    pub const VALUE: u64 = 0x5641_4c55;
    pub const PROBE: u64 = 0x5052_4f42;
    pub const OBSERVE: u64 = 0x4f42_5356;
    pub const TEST: u64 = 0x5445_5354;
    pub const MODEL: u64 = 0x4d4f_444c;
}

#[derive(Clone)]
pub struct KeyedStream {
    rng: ChaCha8Rng,
}

impl KeyedStream {
    pub fn new(seed: u64, tag: u64, a: u64, b: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        for (chunk, word) in key.chunks_exact_mut(8).zip([seed, tag, a, b]) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Uniform at counter position `index` of the keyed stream.
    pub fn at(seed: u64, tag: u64, a: u64, b: u64, stream: u64, index: u64) -> f64 {
        let mut s = Self::new(seed, tag, a, b, stream);
        s.rng.set_word_pos(u128::from(index) * 2);
        open_unit(s.rng.next_u64())
    }

    pub fn uniform(&mut self) -> f64 {
        open_unit(self.rng.next_u64())
    }

    pub fn uniforms(&mut self, k: usize) -> Vec<f64> {
        (0..k).map(|_| self.uniform()).collect()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn standard_normal(&mut self) -> f64 {
        normal_quantile(self.uniform())
    }

    /// Uniform integer in `0..n` (n > 0), rejection sampled.
    pub fn below(&mut self, n: usize) -> usize {
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.rng.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Maps 64 random bits to the open interval (0, 1) on a grid of spacing 2^-52.
pub fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / 4_503_599_627_370_496.0)
}

pub fn normal_quantile(u: f64) -> f64 {
    thread_local! {
        static STD: Normal = Normal::standard();
    }
    STD.with(|n| n.inverse_cdf(u))
}

pub fn normal_cdf(x: f64) -> f64 {
    thread_local! {
        static STD: Normal = Normal::standard();
    }
    STD.with(|n| n.cdf(x))
}

/// SplitMix64 finalizer, used to derive sub-seeds from configuration seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    mix64(seed ^ mix64(salt))
}
