use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

/// Seeded ChaCha8 stream.
///
/// ChaCha8 output is specified bit-for-bit, so a given `(seed, stream)` pair
/// yields the same numbers on every platform. Normal deviates go through
/// `rand_distr`'s ziggurat sampler.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream under the same seed. Used to keep e.g. weight init
    /// and data generation from sharing draws.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..bound` (multiply-shift; bias is below 2^-64 * bound).
    pub fn below(&mut self, bound: usize) -> usize {
        ((self.inner.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn fill_normal(&mut self, out: &mut [f64], stddev: f64) {
        for x in out {
            *x = stddev * self.normal();
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// `len` i.i.d. draws from N(0, stddev^2). Always consumes `len` normals, so
/// the stream position does not depend on `stddev`.
pub fn gaussian_vector(rng: &mut Rng, len: usize, stddev: f64) -> Vec<f64> {
    let mut out = alloc::vec![0.0; len];
    rng.fill_normal(&mut out, stddev);
    out
}
