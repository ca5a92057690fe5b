//! Seeded pseudo-random generator.
//!
//! A `ChaCha8` stream keyed by the seed through `seed_from_u64`. The output for
//! a given seed is fixed by the cipher, so runs reproduce across platforms.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent child stream keyed by `stream`. The parent is not advanced.
    ///
    /// The child key is drawn from cipher stream `stream` under the parent's
    /// key, so nested derivations never collide with direct ones.
    pub fn derive(&self, stream: u64) -> Rng {
        let mut keyed = ChaCha8Rng::from_seed(self.inner.get_seed());
        keyed.set_stream(stream);
        let mut seed = [0u8; 32];
        keyed.fill_bytes(&mut seed);
        Rng {
            inner: ChaCha8Rng::from_seed(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    /// Standard normal draw.
    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
