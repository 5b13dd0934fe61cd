use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::hashing::HashFamily;

/// Indices of `[0, M)` that `h0` assigns to one server, ascending.
///
/// Both ends of a Pull derive the same list from `(M, h0 seed, n)`, so a
/// server can name its entries by position in this list instead of by
/// global index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashUniverse {
    server: usize,
    indices: Vec<u64>,
}

impl HashUniverse {
    /// Explicit universe; `indices` must be strictly ascending.
    pub fn from_sorted(server: usize, indices: Vec<u64>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidHashParams(
                "hash universe must be strictly ascending".into(),
            ));
        }
        Ok(Self { server, indices })
    }

    /// One universe per server, in one pass over `[0, M)`.
    pub fn build_all(universe: u64, family: &HashFamily) -> Vec<HashUniverse> {
        let n = family.partitions();
        let expect = (universe as usize / n) + 1;
        let mut buckets: Vec<Vec<u64>> = (0..n).map(|_| Vec::with_capacity(expect)).collect();
        for idx in 0..universe {
            buckets[family.partition_of(idx)].push(idx);
        }
        buckets
            .into_iter()
            .enumerate()
            .map(|(server, indices)| HashUniverse { server, indices })
            .collect()
    }

    /// Like [`build_all`](Self::build_all) but memoized on `(M, h0 seed, n)`.
    ///
    /// Only the few most recent layouts are kept.
    pub fn cached(universe: u64, family: &HashFamily) -> Arc<Vec<HashUniverse>> {
        const KEEP: usize = 4;
        type Entry = ((u64, u64, usize), Arc<Vec<HashUniverse>>);
        static CACHE: OnceLock<Mutex<Vec<Entry>>> = OnceLock::new();

        let key = (universe, family.seed0(), family.partitions());
        let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
        if let Some((_, hit)) = cache.lock().unwrap().iter().find(|(k, _)| *k == key) {
            return Arc::clone(hit);
        }
        let built = Arc::new(Self::build_all(universe, family));
        let mut guard = cache.lock().unwrap();
        if guard.len() >= KEEP {
            guard.remove(0);
        }
        guard.push((key, Arc::clone(&built)));
        built
    }

    pub fn server(&self) -> usize {
        self.server
    }

    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn position(&self, index: u64) -> Option<usize> {
        self.indices.binary_search(&index).ok()
    }
}

/// Hash-bitmap bits a worker receives in one Pull: `Σ_i |𝕀_i|`, always `M`.
pub fn pull_bitmap_total(universe: u64, family: &HashFamily) -> u64 {
    HashUniverse::build_all(universe, family)
        .iter()
        .map(|u| u.len() as u64)
        .sum()
}

/// Plain-bitmap bits per worker per Pull when partitions are hashed: each server's bitmap spans all of `[0, M)`.
pub fn plain_bitmap_pull_total(universe: u64, servers: usize) -> u64 {
    universe * servers as u64
}
