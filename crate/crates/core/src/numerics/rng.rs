use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};

/// Seeded, splittable random stream.
///
/// Child streams are keyed only by the parent's seed and a tag, so splitting
/// never advances or otherwise observes the parent's position.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self, tag: &str) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(fnv1a(tag.as_bytes()))))
    }

    /// Split keyed by a tag plus integer coordinates (epoch, image index, ...).
    pub fn split_with(&self, tag: &str, keys: &[u64]) -> Rng {
        let mut s = splitmix64(self.seed ^ splitmix64(fnv1a(tag.as_bytes())));
        for &k in keys {
            s = splitmix64(s ^ splitmix64(k.wrapping_add(0x632B_E59B_D9B4_E019)));
        }
        Rng::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("uniform range [{lo}, {hi}) is empty")));
        }
        Ok(self.inner.random_range(lo..hi))
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> Result<usize> {
        if n == 0 {
            return Err(invalid("cannot draw below 0"));
        }
        Ok(self.inner.random_range(0..n))
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: i64, hi: i64) -> Result<i64> {
        if lo > hi {
            return Err(invalid(format!("integer range {lo}..={hi} is empty")));
        }
        Ok(self.inner.random_range(lo..=hi))
    }

    pub fn choice<'a, T>(&mut self, set: &'a [T]) -> Result<&'a T> {
        if set.is_empty() {
            return Err(invalid("choice over an empty set"));
        }
        let i = self.inner.random_range(0..set.len());
        Ok(&set[i])
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> Result<f64> {
        let dist = Normal::new(mean, std).map_err(|e| invalid(format!("normal({mean}, {std}): {e}")))?;
        Ok(dist.sample(&mut self.inner))
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Result<Vec<usize>> {
        if k > n {
            return Err(invalid(format!("cannot draw {k} distinct values from {n}")));
        }
        Ok(rand::seq::index::sample(&mut self.inner, n, k).into_vec())
    }
}
