//! Imbalance ratios of Push and Pull under a partition mapping.

use super::PartitionedSparseTensor;
use crate::error::{Error, Result};
use crate::tensor::SparseTensor;

/// Push: `max_{i,j} n * |I_i^j| / |I_i|` over workers `i` and partitions `j`.
pub fn imbalance_push(workers: &[PartitionedSparseTensor]) -> Result<f64> {
    let counts: Vec<Vec<usize>> = workers.iter().map(|w| w.counts()).collect();
    imbalance_push_counts(&counts)
}

/// [`imbalance_push`] over raw per-worker partition counts.
pub fn imbalance_push_counts(per_worker: &[Vec<usize>]) -> Result<f64> {
    if per_worker.is_empty() {
        return Err(Error::EmptyInput);
    }
    per_worker.iter().try_fold(0.0f64, |acc, counts| {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyTensor);
        }
        let n = counts.len() as f64;
        let worst = counts.iter().copied().max().unwrap_or(0) as f64;
        Ok(acc.max(n * worst / total as f64))
    })
}

/// Pull: `max_i n * |𝕀_i| / |I|` over the servers' aggregated index sets.
///
/// Server sets are disjoint, so `|I|` is the sum of their sizes.
pub fn imbalance_pull(server_sets: &[SparseTensor]) -> Result<f64> {
    let loads: Vec<usize> = server_sets.iter().map(SparseTensor::nnz).collect();
    imbalance_pull_counts(&loads)
}

pub fn imbalance_pull_counts(loads: &[usize]) -> Result<f64> {
    if loads.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: usize = loads.iter().sum();
    if total == 0 {
        return Err(Error::EmptyTensor);
    }
    let worst = loads.iter().copied().max().unwrap_or(0);
    Ok(loads.len() as f64 * worst as f64 / total as f64)
}

/// `1 + c * sqrt(n ln n / balls)`: the balls-into-bins imbalance envelope for `balls` indices over `n` servers.
pub fn load_balance_bound(n: usize, balls: f64, c: f64) -> f64 {
    let n = n as f64;
    1.0 + c * (n * n.ln() / balls).sqrt()
}
