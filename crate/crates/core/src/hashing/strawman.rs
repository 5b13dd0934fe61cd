//! Single-hash, last-writer-wins baseline. Lossy under collisions; kept to measure that loss.

use super::{reduce, seeded_hash, HashFamily, PartitionedSparseTensor};
use crate::error::{Error, Result};
use crate::tensor::SparseTensor;

/// Hashes each index once into an `n x r` memory with `h: key -> [n * r]`;
/// a later write to an occupied slot silently replaces the earlier one.
/// `h` is keyed by the family's `seed0`. Returns the surviving partitions
/// and how many indices were overwritten.
pub fn strawman_hash(
    t: &SparseTensor,
    n: usize,
    r: usize,
    family: &HashFamily,
) -> Result<(PartitionedSparseTensor, usize)> {
    if n == 0 || r == 0 {
        return Err(Error::InvalidHashParams(format!(
            "need n >= 1 and r >= 1, got n = {n}, r = {r}"
        )));
    }
    let range = (n * r) as u64;
    let mut memory = vec![0u64; n * r];
    let mut slot_value = vec![0f32; n * r];
    for (idx, val) in t.iter() {
        let key = idx + 1;
        let h = reduce(seeded_hash(family.seed0(), key), range) as usize;
        memory[h] = key;
        slot_value[h] = val;
    }

    let parts: Vec<SparseTensor> = memory
        .chunks(r)
        .zip(slot_value.chunks(r))
        .map(|(keys, vals)| {
            let mut pairs: Vec<(u64, f32)> = keys
                .iter()
                .zip(vals)
                .filter(|(&k, _)| k != 0)
                .map(|(&k, &v)| (k - 1, v))
                .collect();
            pairs.sort_unstable_by_key(|p| p.0);
            let (indices, values) = pairs.into_iter().unzip();
            SparseTensor::from_sorted_unchecked(t.universe(), indices, values)
        })
        .collect();
    let parts = PartitionedSparseTensor::new(parts);
    let lost = t.nnz() - parts.total();
    Ok((parts, lost))
}
