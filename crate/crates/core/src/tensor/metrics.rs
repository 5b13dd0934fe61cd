//! Sparsity metrics: density, pairwise overlap, densification and skewness.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{aggregate, even_ranges, SparseTensor};
use crate::error::{Error, Result};

/// Fraction of the universe held as non-zero entries.
pub fn density(t: &SparseTensor) -> f64 {
    t.nnz() as f64 / t.universe() as f64
}

/// `|I_a ∩ I_b| / min(|I_a|, |I_b|)`.
pub fn overlap_ratio(a: &SparseTensor, b: &SparseTensor) -> Result<f64> {
    if a.universe() != b.universe() {
        return Err(Error::UniverseMismatch {
            expected: a.universe(),
            found: b.universe(),
        });
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyTensor);
    }
    let common = intersection_size(&sorted_indices(a), &sorted_indices(b));
    Ok(common as f64 / a.nnz().min(b.nnz()) as f64)
}

/// Density after aggregation divided by the mean input density.
pub fn densification_ratio(tensors: &[SparseTensor]) -> Result<f64> {
    if tensors.is_empty() {
        return Err(Error::EmptyInput);
    }
    if tensors.iter().any(|t| t.is_empty()) {
        return Err(Error::EmptyTensor);
    }
    let agg = aggregate(tensors)?;
    let mean = tensors.iter().map(density).sum::<f64>() / tensors.len() as f64;
    Ok(density(&agg) / mean)
}

/// Largest per-range density over the whole-tensor density, for `n` contiguous ranges of `ceil(M/n)`.
///
/// Each range's density uses that range's actual length, so a short trailing
/// range is not penalised.
pub fn skewness_ratio(t: &SparseTensor, n: usize) -> Result<f64> {
    if t.is_empty() {
        return Err(Error::EmptyTensor);
    }
    if n == 0 {
        return Err(Error::InvalidTensor("skewness needs at least one partition".into()));
    }
    let ranges = even_ranges(t.universe(), n);
    let chunk = ranges[0].end - ranges[0].start;
    let mut counts = vec![0u64; n];
    for &i in t.indices() {
        counts[(i / chunk) as usize] += 1;
    }
    let max_density = ranges
        .iter()
        .zip(&counts)
        .filter(|(r, _)| r.end > r.start)
        .map(|(r, &c)| c as f64 / (r.end - r.start) as f64)
        .fold(0.0, f64::max);
    Ok(max_density / density(t))
}

pub(crate) fn sorted_indices(t: &SparseTensor) -> Vec<u64> {
    if t.is_sorted() {
        t.indices().to_vec()
    } else {
        let mut v = t.indices().to_vec();
        v.sort_unstable();
        v
    }
}

pub(crate) fn intersection_size(a: &[u64], b: &[u64]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Measured sparsity characteristics of a layer across `n` GPUs.
///
/// `gamma[k]` is the densification ratio after aggregating `k` tensors and
/// `skew[p]` the skewness ratio under `p` contiguous partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityProfile {
    pub d: f64,
    pub gamma: BTreeMap<u64, f64>,
    #[serde(default)]
    pub skew: BTreeMap<u64, f64>,
}

impl SparsityProfile {
    pub fn gamma(&self, k: u64) -> Result<f64> {
        self.gamma
            .get(&k)
            .copied()
            .ok_or_else(|| Error::MissingProfileEntry(format!("gamma[{k}]")))
    }

    pub fn skew(&self, n: u64) -> Result<f64> {
        self.skew
            .get(&n)
            .copied()
            .ok_or_else(|| Error::MissingProfileEntry(format!("skew[{n}]")))
    }

    /// Checks `gamma[1] == 1`, `1 <= gamma[k] <= k`, monotonicity in `k`, and `d * gamma[k] <= 1`.
    ///
    /// Measured profiles can miss monotonicity by rounding when tensor sizes
    /// differ, so comparisons allow a relative slack of `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTensor(format!("sparsity profile: {msg}")));
        if !(self.d > 0.0 && self.d <= 1.0) {
            return bad(format!("density {} outside (0, 1]", self.d));
        }
        if let Some(&g1) = self.gamma.get(&1) {
            if (g1 - 1.0).abs() > tol {
                return bad(format!("gamma[1] = {g1}, expected 1"));
            }
        }
        let mut prev = 1.0f64;
        for (&k, &g) in &self.gamma {
            if k == 0 {
                return bad("gamma[0] is undefined".into());
            }
            if g < 1.0 - tol || g > k as f64 * (1.0 + tol) {
                return bad(format!("gamma[{k}] = {g} outside [1, {k}]"));
            }
            if g < prev * (1.0 - tol) {
                return bad(format!("gamma decreases at k = {k}"));
            }
            if self.d * g > 1.0 + tol {
                return bad(format!("d * gamma[{k}] = {} exceeds 1", self.d * g));
            }
            prev = g;
        }
        for (&p, &s) in &self.skew {
            if s < 1.0 - tol {
                return bad(format!("skew[{p}] = {s} below 1"));
            }
        }
        Ok(())
    }
}
