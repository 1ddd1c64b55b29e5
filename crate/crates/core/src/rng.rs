//! Seeded random streams.
//!
//! Every stochastic step in the crate draws from an [`RngStream`], which wraps
//! ChaCha8 (a counter-based generator with a portable, documented output
//! sequence). A 64-bit seed fully determines the stream on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Name of the generator behind every [`RngStream`].
pub const ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer, used to derive child seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream, a pure function of `(seed, tag)`.
    ///
    /// Consumes nothing from `self`, so derivation order never changes the
    /// parent's sequence.
    pub fn derive(&self, tag: u64) -> RngStream {
        RngStream::new(mix64(self.seed ^ mix64(tag)))
    }

    /// Uniform draw in `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[low, high]` (inclusive).
    pub fn int_inclusive(&mut self, low: i64, high: i64) -> i64 {
        self.inner.random_range(low..=high)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// Derive a 64-bit tag from a short label, so streams can be named.
pub fn tag(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = RngStream::new(99);
        let mut b = RngStream::new(99);
        for _ in 0..1000 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn derive_does_not_consume_parent() {
        let mut a = RngStream::new(5);
        let _child = a.derive(1);
        let mut b = RngStream::new(5);
        assert_eq!(a.uniform(0.0, 1.0), b.uniform(0.0, 1.0));
        assert_ne!(a.derive(1).seed(), a.derive(2).seed());
    }

    #[test]
    fn int_range_is_inclusive() {
        let mut r = RngStream::new(3);
        let mut seen = [false; 5];
        for _ in 0..500 {
            let v = r.int_inclusive(-2, 2);
            seen[(v + 2) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
