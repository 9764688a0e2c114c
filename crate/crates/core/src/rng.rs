//! Seeded random streams.
//!
//! Every random quantity in a run is drawn from a [`RandomStream`] derived
//! from `(seed, name, index)`. The derivation hashes the triple with SHA-256,
//! so streams with different names or indices are independent and adding a
//! new consumer never shifts the draws of an existing one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

pub mod streams {
    pub const DATA_SIGNATURE: &str = "data/signature";
    pub const DATA_PAIR: &str = "data/pair";
    pub const INIT: &str = "init";
    pub const TIME_DRAWS: &str = "time-draws";
    pub const BRIDGE_NOISE: &str = "bridge-noise";
    pub const SDE: &str = "sde";
    pub const SHUFFLE: &str = "shuffle";
    pub const VALIDATION: &str = "validation";
    pub const EVAL: &str = "eval";
}

#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent substream identified by a name and an index.
    pub fn derive(seed: u64, name: &str, index: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update(index.to_le_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        Self {
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct values from `0..n`, in draw order.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
