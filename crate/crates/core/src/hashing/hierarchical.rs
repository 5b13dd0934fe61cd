//! Hierarchical hashing into partitioned parallel/serial memory.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::HashFamily;
use crate::error::{Error, Result};
use crate::tensor::SparseTensor;

/// `n` partitions of `r1` parallel slots followed by `r2` serial slots.
///
/// Slots hold shifted indices (`index + 1`); zero marks an empty slot. Each
/// partition's serial cursor starts at `r1` and never passes `r1 + r2`.
#[derive(Debug)]
pub struct HashMemory {
    n: usize,
    r1: usize,
    r2: usize,
    slots: Vec<AtomicU64>,
    cursors: Vec<AtomicUsize>,
}

impl HashMemory {
    pub fn new(n: usize, r1: usize, r2: usize) -> Result<Self> {
        if n == 0 || r1 == 0 {
            return Err(Error::InvalidHashParams(format!(
                "need n >= 1 and r1 >= 1, got n = {n}, r1 = {r1}"
            )));
        }
        let width = r1 + r2;
        Ok(Self {
            n,
            r1,
            r2,
            slots: (0..n * width).map(|_| AtomicU64::new(0)).collect(),
            cursors: (0..n).map(|_| AtomicUsize::new(r1)).collect(),
        })
    }

    pub fn partitions(&self) -> usize {
        self.n
    }

    pub fn parallel_slots(&self) -> usize {
        self.r1
    }

    pub fn serial_slots(&self) -> usize {
        self.r2
    }

    #[inline]
    fn slot(&self, p: usize, q: usize) -> &AtomicU64 {
        &self.slots[p * (self.r1 + self.r2) + q]
    }

    /// Writes `key` into parallel slot `q` of partition `p` if it is empty.
    ///
    /// The compare-exchange is the write plus read-back check in one step: a
    /// concurrent writer that wins the slot shows up as a mismatch, which the
    /// caller treats as a collision.
    #[inline]
    pub fn try_claim(&self, p: usize, q: usize, key: u64) -> bool {
        debug_assert!(key != 0 && q < self.r1);
        let cell = self.slot(p, q);
        if cell.load(Ordering::Relaxed) != 0 {
            return false;
        }
        cell.compare_exchange(0, key, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
    }

    /// Appends `key` to the serial region of partition `p`; `None` once the region is full.
    pub fn append_serial(&self, p: usize, key: u64) -> Option<usize> {
        let limit = self.r1 + self.r2;
        let q = self.cursors[p]
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |c| {
                (c < limit).then_some(c + 1)
            })
            .ok()?;
        self.slot(p, q).store(key, Ordering::Release);
        Some(q)
    }

    /// Last resort once the serial region is full: first free parallel slot at or after `start`.
    fn spill(&self, p: usize, start: usize, key: u64) -> bool {
        (0..self.r1)
            .map(|off| (start + off) % self.r1)
            .any(|q| self.try_claim(p, q, key))
    }

    /// Current serial cursor of partition `p`, in `[r1, r1 + r2]`.
    pub fn cursor(&self, p: usize) -> usize {
        self.cursors[p].load(Ordering::Acquire)
    }

    /// Non-empty slots of partition `p`, unshifted, in slot order.
    pub fn partition_indices(&self, p: usize) -> Vec<u64> {
        let width = self.r1 + self.r2;
        self.slots[p * width..(p + 1) * width]
            .iter()
            .map(|s| s.load(Ordering::Acquire))
            .filter(|&k| k != 0)
            .map(|k| k - 1)
            .collect()
    }
}

/// Memory sizing and parallelism for one hashing call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashConfig {
    pub r1: usize,
    pub r2: usize,
    pub lanes: usize,
}

impl HashConfig {
    /// `r1 = ceil(factor * nnz / n)` per partition and `r2 = floor(r1 * ratio)`.
    pub fn sized(nnz: usize, n: usize, r1_factor: f64, r2_ratio: f64, lanes: usize) -> Self {
        let r1 = ((r1_factor * nnz as f64) / n as f64).ceil().max(1.0) as usize;
        let r2 = (r1 as f64 * r2_ratio).floor() as usize;
        Self {
            r1,
            r2,
            lanes: lanes.max(1),
        }
    }

    /// [`sized`](Self::sized), with `r2` raised where needed so that every
    /// partition of `t` under `family` fits in `r1 + r2` slots.
    pub fn fitted(t: &SparseTensor, family: &HashFamily, r1_factor: f64, r2_ratio: f64, lanes: usize) -> Self {
        let n = family.partitions();
        let mut config = Self::sized(t.nnz(), n, r1_factor, r2_ratio, lanes);
        let mut loads = vec![0usize; n];
        for &i in t.indices() {
            loads[family.partition_of(i)] += 1;
        }
        let worst = loads.into_iter().max().unwrap_or(0);
        config.r2 = config.r2.max(worst.saturating_sub(config.r1));
        config
    }

    /// `r1 = 2|I|/n`, `r2 = r1/10`, one lane.
    pub fn default_for(nnz: usize, n: usize) -> Self {
        Self::sized(nnz, n, 2.0, 0.1, 1)
    }
}

/// Where the indices of one hashing call ended up.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionStats {
    pub total: usize,
    /// Indices that failed all `k` slot hashes.
    pub serial_writes: usize,
    /// Subset of `serial_writes` that found the serial region full and took a free parallel slot.
    pub spilled: usize,
    /// Rehash depth at which the parallel write succeeded, `1..=k`.
    pub rehash_histogram: BTreeMap<usize, usize>,
}

impl CollisionStats {
    pub fn serial_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.serial_writes as f64 / self.total as f64
        }
    }

    fn merge(&mut self, other: CollisionStats) {
        self.total += other.total;
        self.serial_writes += other.serial_writes;
        self.spilled += other.spilled;
        for (depth, count) in other.rehash_histogram {
            *self.rehash_histogram.entry(depth).or_default() += count;
        }
    }
}

/// One worker's sparse tensor split into `n` index-disjoint parts, one per server.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedSparseTensor {
    parts: Vec<SparseTensor>,
}

impl PartitionedSparseTensor {
    pub fn new(parts: Vec<SparseTensor>) -> Self {
        Self { parts }
    }

    pub fn parts(&self) -> &[SparseTensor] {
        &self.parts
    }

    pub fn into_parts(self) -> Vec<SparseTensor> {
        self.parts
    }

    pub fn partitions(&self) -> usize {
        self.parts.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.parts.iter().map(SparseTensor::nnz).collect()
    }

    pub fn total(&self) -> usize {
        self.parts.iter().map(SparseTensor::nnz).sum()
    }

    /// Every index held by any part, ascending.
    pub fn union_indices(&self) -> Vec<u64> {
        let mut all: Vec<u64> = self
            .parts
            .iter()
            .flat_map(|p| p.indices().iter().copied())
            .collect();
        all.sort_unstable();
        all
    }
}

/// Splits `t` into `family.partitions()` parts with hierarchical hashing.
///
/// Partition `p = h0(idx + 1)`; inside it the index tries slots
/// `h1..hk` of the parallel region and falls back to an atomic append into
/// the serial region. Input indices are cut into `lanes` contiguous chunks
/// hashed concurrently. Each part is returned sorted, so the result does not
/// depend on `lanes` even though the slot layout does.
pub fn hierarchical_hash(
    t: &SparseTensor,
    family: &HashFamily,
    config: HashConfig,
) -> Result<PartitionedSparseTensor> {
    hierarchical_hash_with_stats(t, family, config).map(|(parts, _)| parts)
}

/// Serial-write and rehash-depth counts for one hashing call; the histogram plus `serial_writes` sums to `|I|`.
pub fn collision_stats(
    t: &SparseTensor,
    family: &HashFamily,
    config: HashConfig,
) -> Result<CollisionStats> {
    let memory = HashMemory::new(family.partitions(), config.r1, config.r2)?;
    fill(&memory, t.indices(), family, config.lanes)
}

pub fn hierarchical_hash_with_stats(
    t: &SparseTensor,
    family: &HashFamily,
    config: HashConfig,
) -> Result<(PartitionedSparseTensor, CollisionStats)> {
    let memory = HashMemory::new(family.partitions(), config.r1, config.r2)?;
    let stats = fill(&memory, t.indices(), family, config.lanes)?;
    Ok((extract(&memory, t), stats))
}

fn fill(
    memory: &HashMemory,
    indices: &[u64],
    family: &HashFamily,
    lanes: usize,
) -> Result<CollisionStats> {
    let lanes = lanes.clamp(1, indices.len().max(1));
    if lanes == 1 {
        return insert_chunk(memory, indices, family);
    }
    let chunk = indices.len().div_ceil(lanes);
    let results: Vec<Result<CollisionStats>> = std::thread::scope(|s| {
        let handles: Vec<_> = indices
            .chunks(chunk)
            .map(|c| s.spawn(move || insert_chunk(memory, c, family)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("hashing lane panicked"))
            .collect()
    });
    let mut stats = CollisionStats::default();
    for r in results {
        stats.merge(r?);
    }
    Ok(stats)
}

fn insert_chunk(memory: &HashMemory, indices: &[u64], family: &HashFamily) -> Result<CollisionStats> {
    let k = family.depth();
    let r1 = memory.parallel_slots();
    let mut stats = CollisionStats {
        total: indices.len(),
        ..Default::default()
    };
    let mut depth_counts = vec![0usize; k + 1];
    'next: for &idx in indices {
        let key = idx + 1;
        let p = family.h0(key);
        for level in 1..=k {
            if memory.try_claim(p, family.slot(level, key, r1), key) {
                depth_counts[level] += 1;
                continue 'next;
            }
        }
        stats.serial_writes += 1;
        if memory.append_serial(p, key).is_none() {
            if !memory.spill(p, family.slot(1, key, r1), key) {
                return Err(Error::SerialOverflow { partition: p });
            }
            stats.spilled += 1;
        }
    }
    stats.rehash_histogram = (1..=k).map(|d| (d, depth_counts[d])).collect();
    Ok(stats)
}

fn extract(memory: &HashMemory, t: &SparseTensor) -> PartitionedSparseTensor {
    let source: Cow<SparseTensor> = if t.is_sorted() {
        Cow::Borrowed(t)
    } else {
        Cow::Owned(t.sorted())
    };
    let parts = (0..memory.partitions())
        .map(|p| {
            let mut indices = memory.partition_indices(p);
            indices.sort_unstable();
            let values = indices
                .iter()
                .map(|i| {
                    let pos = source
                        .indices()
                        .binary_search(i)
                        .expect("hashed index comes from the input");
                    source.values()[pos]
                })
                .collect();
            SparseTensor::from_sorted_unchecked(t.universe(), indices, values)
        })
        .collect();
    PartitionedSparseTensor::new(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(m: u64, indices: Vec<u64>) -> SparseTensor {
        let n = indices.len();
        SparseTensor::new(m, indices, vec![1.0; n]).unwrap()
    }

    #[test]
    fn single_index_lands_on_h0() {
        let family = HashFamily::derived(3, 4, 8, 3).unwrap();
        let t = ones(1000, vec![417]);
        let parts = hierarchical_hash(&t, &family, HashConfig { r1: 4, r2: 1, lanes: 1 }).unwrap();
        let p = family.partition_of(417);
        assert_eq!(parts.counts().iter().sum::<usize>(), 1);
        assert_eq!(parts.parts()[p].indices(), &[417]);
    }

    #[test]
    fn fully_colliding_pair_uses_serial_region() {
        // Search for two indices that agree on h0 and on every slot hash.
        let r1 = 2;
        let family = HashFamily::derived(9, 10, 2, 2).unwrap();
        let signature = |i: u64| {
            let key = i + 1;
            (family.h0(key), family.slot(1, key, r1), family.slot(2, key, r1))
        };
        let a = 0u64;
        let b = (1..10_000).find(|&i| signature(i) == signature(a)).unwrap();
        let t = ones(20_000, vec![a, b]);
        let config = HashConfig { r1, r2: 1, lanes: 1 };
        let (parts, stats) = hierarchical_hash_with_stats(&t, &family, config).unwrap();
        assert_eq!(parts.union_indices(), vec![a, b]);
        assert_eq!(stats.serial_writes, 1);
        assert_eq!(stats.spilled, 0);
        assert_eq!(stats.rehash_histogram[&1], 1);
    }

    #[test]
    fn injective_slot_hash_needs_no_rehash() {
        let family = HashFamily::derived(1, 2, 1, 3).unwrap();
        // Pick indices whose h1 slots are pairwise distinct.
        let r1 = 1024;
        let mut seen = std::collections::HashSet::new();
        let picked: Vec<u64> = (0..5000u64)
            .filter(|&i| seen.insert(family.slot(1, i + 1, r1)))
            .take(100)
            .collect();
        let t = ones(5000, picked);
        let stats = collision_stats(&t, &family, HashConfig { r1, r2: 0, lanes: 1 }).unwrap();
        assert_eq!(stats.serial_writes, 0);
        assert_eq!(stats.rehash_histogram[&1], 100);
    }

    #[test]
    fn overflow_only_when_partition_exceeds_capacity() {
        let family = HashFamily::derived(5, 6, 1, 1).unwrap();
        let t = ones(100, (0..10).collect());
        // 10 indices, 10 slots: collisions spill but nothing is lost.
        let parts = hierarchical_hash(&t, &family, HashConfig { r1: 9, r2: 1, lanes: 1 }).unwrap();
        assert_eq!(parts.union_indices(), (0..10).collect::<Vec<_>>());
        let err = hierarchical_hash(&t, &family, HashConfig { r1: 8, r2: 1, lanes: 1 }).unwrap_err();
        assert_eq!(err, Error::SerialOverflow { partition: 0 });
    }

    #[test]
    fn serial_cursor_stays_bounded() {
        let memory = HashMemory::new(1, 2, 2).unwrap();
        assert_eq!(memory.cursor(0), 2);
        assert_eq!(memory.append_serial(0, 1), Some(2));
        assert_eq!(memory.append_serial(0, 2), Some(3));
        assert_eq!(memory.append_serial(0, 3), None);
        assert_eq!(memory.cursor(0), 4);
    }

    #[test]
    fn lane_count_does_not_change_result() {
        let family = HashFamily::derived(77, 78, 4, 2).unwrap();
        let t = ones(50_000, (0..50_000).step_by(7).collect());
        let config = HashConfig::default_for(t.nnz(), 4);
        let base = hierarchical_hash(&t, &family, config).unwrap();
        for lanes in [2, 4, 8] {
            let other = hierarchical_hash(&t, &family, HashConfig { lanes, ..config }).unwrap();
            assert_eq!(base, other);
        }
    }

    #[test]
    fn default_sizing() {
        let c = HashConfig::default_for(1000, 16);
        assert_eq!(c.r1, 125);
        assert_eq!(c.r2, 12);
        assert_eq!(HashConfig::default_for(0, 4).r1, 1);
    }

    #[test]
    fn fitted_sizing_never_overflows() {
        for seed in 0..200u64 {
            let family = HashFamily::derived(seed, seed + 1, 4, 1).unwrap();
            let t = SparseTensor::new(10_000, (0..10).map(|i| i * 997 + seed).collect(), vec![1.0; 10]).unwrap();
            let config = HashConfig::fitted(&t, &family, 2.0, 0.1, 1);
            assert!(config.r2 >= HashConfig::sized(10, 4, 2.0, 0.1, 1).r2);
            hierarchical_hash(&t, &family, config).unwrap();
        }
    }
}
