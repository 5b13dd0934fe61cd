use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded 64-bit hash. Deterministic across processes and platforms.
#[inline]
pub fn seeded_hash(seed: u64, key: u64) -> u64 {
    let s = mix64(seed.wrapping_add(GOLDEN));
    mix64(mix64(key ^ s).wrapping_add(s))
}

/// Maps a 64-bit hash onto `[0, range)` by multiply-shift.
#[inline]
pub fn reduce(hash: u64, range: u64) -> u64 {
    ((hash as u128 * range as u128) >> 64) as u64
}

/// Derives `count` seeds from one seed (SplitMix64 stream).
pub fn derive_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut state = seed;
    (0..count)
        .map(|_| {
            state = state.wrapping_add(GOLDEN);
            mix64(state)
        })
        .collect()
}

/// The two-level hash family: `h0` picks one of `n` partitions and
/// `h1..hk` pick slots inside a partition's parallel region.
///
/// Every worker must share `seed0` so an index lands on the same server
/// everywhere; the slot seeds may differ per worker. Keys passed to
/// [`h0`](Self::h0) and [`slot`](Self::slot) are shifted indices (`index + 1`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashFamily {
    seed0: u64,
    seeds: Vec<u64>,
    n: usize,
}

impl HashFamily {
    pub fn new(seed0: u64, seeds: Vec<u64>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidHashParams("need at least one partition".into()));
        }
        if seeds.is_empty() {
            return Err(Error::InvalidHashParams("need at least one slot hash (k >= 1)".into()));
        }
        Ok(Self { seed0, seeds, n })
    }

    /// Family with shared `seed0` and `k` slot seeds derived from `worker_seed`.
    pub fn derived(seed0: u64, worker_seed: u64, n: usize, k: usize) -> Result<Self> {
        Self::new(seed0, derive_seeds(worker_seed, k), n)
    }

    pub fn seed0(&self) -> u64 {
        self.seed0
    }

    pub fn slot_seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn partitions(&self) -> usize {
        self.n
    }

    /// Rehash depth `k`.
    pub fn depth(&self) -> usize {
        self.seeds.len()
    }

    #[inline]
    pub fn h0(&self, key: u64) -> usize {
        reduce(seeded_hash(self.seed0, key), self.n as u64) as usize
    }

    /// `h_level(key)` in `[0, r1)`, `level` in `1..=k`.
    #[inline]
    pub fn slot(&self, level: usize, key: u64, r1: usize) -> usize {
        reduce(seeded_hash(self.seeds[level - 1], key), r1 as u64) as usize
    }

    /// Partition of a 0-based element index.
    #[inline]
    pub fn partition_of(&self, index: u64) -> usize {
        self.h0(index + 1)
    }
}
