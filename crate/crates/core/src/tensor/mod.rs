//! Dense and sparse gradient tensors.
//!
//! A [`SparseTensor`] is a COO view of a flat gradient vector: a set of
//! distinct element indices in `[0, M)` with one value each. Equality is set
//! equality over `(index, value)` pairs, so two tensors holding the same
//! entries in different storage orders compare equal.

mod binary;
mod metrics;

use std::cmp::Ordering;
use std::ops::Range;

pub use binary::{read_sparse, write_sparse, SPARSE_MAGIC, SPARSE_VERSION};
pub use metrics::{
    densification_ratio, density, overlap_ratio, skewness_ratio, SparsityProfile,
};

use crate::error::{Error, Result};

/// Flat gradient vector of one layer, including its zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    values: Vec<f32>,
}

impl DenseTensor {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidTensor("dense tensor needs at least one element".into()));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> u64 {
        self.values.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Extracts the non-zero entries in ascending index order.
    pub fn to_sparse(&self) -> SparseTensor {
        let (indices, values) = self
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u64, *v))
            .unzip();
        SparseTensor {
            universe: self.len(),
            indices,
            values,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SparseTensor {
    universe: u64,
    indices: Vec<u64>,
    values: Vec<f32>,
}

impl SparseTensor {
    /// Builds a tensor, checking that indices are distinct and inside `[0, universe)`.
    pub fn new(universe: u64, indices: Vec<u64>, values: Vec<f32>) -> Result<Self> {
        if universe == 0 {
            return Err(Error::InvalidTensor("universe must be at least 1".into()));
        }
        if indices.len() != values.len() {
            return Err(Error::InvalidTensor(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= universe) {
            return Err(Error::InvalidTensor(format!(
                "index {bad} outside universe of {universe}"
            )));
        }
        if !is_strictly_sorted(&indices) {
            let mut sorted = indices.clone();
            sorted.sort_unstable();
            if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::InvalidTensor(format!("duplicate index {}", w[0])));
            }
        }
        Ok(Self {
            universe,
            indices,
            values,
        })
    }

    pub fn empty(universe: u64) -> Result<Self> {
        Self::new(universe, Vec::new(), Vec::new())
    }

    /// Builds from `(index, value)` pairs already known to be strictly ascending and in range.
    pub(crate) fn from_sorted_unchecked(universe: u64, indices: Vec<u64>, values: Vec<f32>) -> Self {
        debug_assert!(is_strictly_sorted(&indices));
        debug_assert!(indices.last().is_none_or(|&i| i < universe));
        debug_assert_eq!(indices.len(), values.len());
        Self {
            universe,
            indices,
            values,
        }
    }

    pub fn universe(&self) -> u64 {
        self.universe
    }

    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f32)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn is_sorted(&self) -> bool {
        is_strictly_sorted(&self.indices)
    }

    /// Returns the same entries in ascending index order.
    pub fn into_sorted(self) -> Self {
        if self.is_sorted() {
            return self;
        }
        let mut pairs: Vec<(u64, f32)> = self.iter().collect();
        pairs.sort_unstable_by_key(|p| p.0);
        let (indices, values) = pairs.into_iter().unzip();
        Self {
            universe: self.universe,
            indices,
            values,
        }
    }

    pub fn sorted(&self) -> Self {
        self.clone().into_sorted()
    }

    /// Value stored at `index`, if any. Linear scan unless the tensor is sorted.
    pub fn get(&self, index: u64) -> Option<f32> {
        if self.is_sorted() {
            self.indices
                .binary_search(&index)
                .ok()
                .map(|pos| self.values[pos])
        } else {
            self.iter().find(|(i, _)| *i == index).map(|(_, v)| v)
        }
    }

    /// Entries whose index falls in `range`, in storage order.
    pub fn restrict(&self, range: Range<u64>) -> SparseTensor {
        let (indices, values) = self.iter().filter(|(i, _)| range.contains(i)).unzip();
        SparseTensor {
            universe: self.universe,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut dense = vec![0.0f32; self.universe as usize];
        for (i, v) in self.iter() {
            dense[i as usize] = v;
        }
        dense
    }
}

impl PartialEq for SparseTensor {
    fn eq(&self, other: &Self) -> bool {
        if self.universe != other.universe || self.nnz() != other.nnz() {
            return false;
        }
        if self.is_sorted() && other.is_sorted() {
            return self.indices == other.indices && self.values == other.values;
        }
        let a = self.sorted();
        let b = other.sorted();
        a.indices == b.indices && a.values == b.values
    }
}

fn is_strictly_sorted(indices: &[u64]) -> bool {
    indices.windows(2).all(|w| w[0] < w[1])
}

/// Sums a set of sparse tensors over a common universe.
///
/// The index set of the result is the union of the inputs; the value at each
/// index is the sum over the inputs that hold it, accumulated in input
/// order. The result is sorted ascending. This is the reference every
/// synchronization scheme is checked against.
pub fn aggregate<'a, I>(tensors: I) -> Result<SparseTensor>
where
    I: IntoIterator<Item = &'a SparseTensor>,
{
    let tensors: Vec<&SparseTensor> = tensors.into_iter().collect();
    let first = tensors.first().ok_or(Error::EmptyInput)?;
    let universe = first.universe;
    if let Some(t) = tensors.iter().find(|t| t.universe != universe) {
        return Err(Error::UniverseMismatch {
            expected: universe,
            found: t.universe,
        });
    }
    if tensors.len() == 1 {
        return Ok(first.sorted());
    }

    let total: usize = tensors.iter().map(|t| t.nnz()).sum();
    if tensors.len() == 2 && tensors[0].is_sorted() && tensors[1].is_sorted() {
        return Ok(merge_two(universe, tensors[0], tensors[1]));
    }
    if universe <= DENSE_LIMIT && total as u64 * 4 >= universe {
        return Ok(accumulate_dense(universe, &tensors, total));
    }
    let mut pairs: Vec<(u64, f32)> = Vec::with_capacity(total);
    for t in &tensors {
        pairs.extend(t.iter());
    }
    // Stable, so equal indices keep input order and sums are reproducible.
    pairs.sort_by_key(|p| p.0);

    let mut indices = Vec::with_capacity(total);
    let mut values: Vec<f32> = Vec::with_capacity(total);
    for (idx, val) in pairs {
        match indices.last().map(|last: &u64| last.cmp(&idx)) {
            Some(Ordering::Equal) => *values.last_mut().expect("paired with index") += val,
            _ => {
                indices.push(idx);
                values.push(val);
            }
        }
    }
    Ok(SparseTensor::from_sorted_unchecked(universe, indices, values))
}

/// Largest universe for which aggregation may use a dense scratch buffer.
const DENSE_LIMIT: u64 = 1 << 27;

fn merge_two(universe: u64, a: &SparseTensor, b: &SparseTensor) -> SparseTensor {
    let mut indices = Vec::with_capacity(a.nnz() + b.nnz());
    let mut values = Vec::with_capacity(a.nnz() + b.nnz());
    let (mut i, mut j) = (0, 0);
    while i < a.nnz() && j < b.nnz() {
        match a.indices[i].cmp(&b.indices[j]) {
            Ordering::Less => {
                indices.push(a.indices[i]);
                values.push(a.values[i]);
                i += 1;
            }
            Ordering::Greater => {
                indices.push(b.indices[j]);
                values.push(b.values[j]);
                j += 1;
            }
            Ordering::Equal => {
                indices.push(a.indices[i]);
                values.push(a.values[i] + b.values[j]);
                i += 1;
                j += 1;
            }
        }
    }
    indices.extend_from_slice(&a.indices[i..]);
    values.extend_from_slice(&a.values[i..]);
    indices.extend_from_slice(&b.indices[j..]);
    values.extend_from_slice(&b.values[j..]);
    SparseTensor::from_sorted_unchecked(universe, indices, values)
}

/// Sums into a dense buffer in input order, matching the sort-based path exactly.
fn accumulate_dense(universe: u64, tensors: &[&SparseTensor], total: usize) -> SparseTensor {
    let mut acc = vec![0f32; universe as usize];
    let mut seen = vec![0u64; universe.div_ceil(64) as usize];
    let mut distinct = 0usize;
    for t in tensors {
        for (i, v) in t.iter() {
            let (w, bit) = ((i / 64) as usize, 1u64 << (i % 64));
            if seen[w] & bit == 0 {
                seen[w] |= bit;
                acc[i as usize] = v;
                distinct += 1;
            } else {
                acc[i as usize] += v;
            }
        }
    }
    let mut indices = Vec::with_capacity(distinct.min(total));
    let mut values = Vec::with_capacity(distinct.min(total));
    for (w, &word) in seen.iter().enumerate() {
        let mut word = word;
        while word != 0 {
            let i = w * 64 + word.trailing_zeros() as usize;
            indices.push(i as u64);
            values.push(acc[i]);
            word &= word - 1;
        }
    }
    SparseTensor::from_sorted_unchecked(universe, indices, values)
}

/// `n` contiguous ranges of length `ceil(M/n)` covering `[0, M)`; trailing ranges may be short or empty.
pub fn even_ranges(universe: u64, n: usize) -> Vec<Range<u64>> {
    assert!(n >= 1, "need at least one range");
    let chunk = universe.div_ceil(n as u64);
    (0..n as u64)
        .map(|p| {
            let lo = (p * chunk).min(universe);
            let hi = ((p + 1) * chunk).min(universe);
            lo..hi
        })
        .collect()
}
