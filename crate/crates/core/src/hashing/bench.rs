//! Sweeps of hierarchical hashing over memory size and rehash depth.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{hierarchical_hash_with_stats, mix64, HashConfig, HashFamily};
use crate::error::{Error, Result};
use crate::tensor::SparseTensor;

/// Aggregate outcome of hashing every input tensor with one `(k, r1)` setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub k: usize,
    /// Parallel region per partition is `r1_multiplier * |I| / n`.
    pub r1_multiplier: f64,
    pub r2_ratio: f64,
    pub lanes: usize,
    pub indices: usize,
    pub serial_writes: usize,
    pub spilled: usize,
    pub serial_fraction: f64,
    /// Input indices missing from the output; zero unless hashing is broken.
    pub lost: usize,
    pub wall_seconds: f64,
    /// Set when a partition outgrew its memory.
    pub overflow: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchGrid {
    pub partitions: usize,
    pub seed: u64,
    pub ks: Vec<usize>,
    pub r1_multipliers: Vec<f64>,
    pub r2_ratio: f64,
    pub lanes: usize,
}

impl Default for BenchGrid {
    fn default() -> Self {
        BenchGrid {
            partitions: 16,
            seed: 0,
            ks: vec![1, 2, 3, 4],
            r1_multipliers: vec![1.0, 2.0, 4.0],
            r2_ratio: 0.1,
            lanes: 1,
        }
    }
}

/// Runs every `(r1, k)` cell of `grid` over `tensors`, row-major in `r1`.
pub fn bench_hashing(tensors: &[SparseTensor], grid: &BenchGrid) -> Result<Vec<BenchCell>> {
    if tensors.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut cells = Vec::new();
    for &mult in &grid.r1_multipliers {
        for &k in &grid.ks {
            cells.push(bench_cell(tensors, grid, k, mult)?);
        }
    }
    Ok(cells)
}

fn bench_cell(tensors: &[SparseTensor], grid: &BenchGrid, k: usize, mult: f64) -> Result<BenchCell> {
    let mut cell = BenchCell {
        k,
        r1_multiplier: mult,
        r2_ratio: grid.r2_ratio,
        lanes: grid.lanes,
        indices: 0,
        serial_writes: 0,
        spilled: 0,
        serial_fraction: 0.0,
        lost: 0,
        wall_seconds: 0.0,
        overflow: None,
    };
    for (node, t) in tensors.iter().enumerate() {
        let family = HashFamily::derived(grid.seed, mix64(grid.seed ^ (node as u64 + 1)), grid.partitions, k)?;
        let config = HashConfig::sized(t.nnz(), grid.partitions, mult, grid.r2_ratio, grid.lanes);
        let start = Instant::now();
        let outcome = hierarchical_hash_with_stats(t, &family, config);
        cell.wall_seconds += start.elapsed().as_secs_f64();
        match outcome {
            Ok((parts, stats)) => {
                cell.indices += stats.total;
                cell.serial_writes += stats.serial_writes;
                cell.spilled += stats.spilled;
                cell.lost += t.nnz() - parts.union_indices().len();
            }
            Err(e @ Error::SerialOverflow { .. }) => {
                cell.overflow = Some(format!("node {node}: {e}"));
            }
            Err(e) => return Err(e),
        }
    }
    if cell.indices > 0 {
        cell.serial_fraction = cell.serial_writes as f64 / cell.indices as f64;
    }
    Ok(cell)
}
