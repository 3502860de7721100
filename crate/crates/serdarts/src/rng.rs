//! Seeded random state.
//!
//! Every stochastic decision in the crate (parameter init, alpha init,
//! dropout masks, shuffles, synthetic data) draws from an [`RngState`] so a
//! run is fully determined by its 64-bit seed. ChaCha8 keeps the stream
//! stable across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// Deterministic random generator seeded from a single `u64`.
///
/// Identical seeds yield identical draw sequences.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Seed this state was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent substream keyed by `label`.
    ///
    /// Forking does not advance this generator, so the substream layout is a
    /// pure function of (seed, label) — folds and workers can be seeded in
    /// any order.
    pub fn fork(&self, label: u64) -> RngState {
        RngState::new(splitmix64(self.seed ^ splitmix64(label)))
    }

    /// Standard normal draw scaled by `std`.
    pub fn normal(&mut self, std: f64) -> f64 {
        // std = 0 would make Normal::new panic-free but degenerate; handle
        // explicitly so callers can disable noise.
        if std == 0.0 {
            return 0.0;
        }
        Normal::new(0.0, std).unwrap().sample(&mut self.rng)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        Uniform::new(lo, hi).sample(&mut self.rng)
    }

    /// Uniform draw in `[0, 1)`, used for dropout masks.
    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Fisher-Yates shuffle with draws from this state.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            items.swap(i, j);
        }
    }
}

/// SplitMix64 finalizer; used to decorrelate fork labels from the base seed.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}
