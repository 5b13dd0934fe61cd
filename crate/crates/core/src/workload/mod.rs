//! Synthetic sparse workloads with tunable density, overlap and skew, plus
//! top-k sparsification of dense tensors.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costmodel::profile_sparsity;
use crate::error::{Error, Result};
use crate::tensor::{overlap_ratio, DenseTensor, SparseTensor};

/// How per-node index sets are made to overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum OverlapModel {
    /// A core of `ceil(omega * nnz)` indices held by every node; the rest of
    /// each node's indices are disjoint from all other nodes.
    #[default]
    SharedCore,
    /// Every node samples `nnz` indices uniformly from a common pool of
    /// `ceil(nnz / omega)` indices, so pairs overlap by `omega` on average.
    RandomPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub m: u64,
    pub n: usize,
    pub d: f64,
    pub omega: f64,
    /// Hot tier is `[0, ceil(hot_fraction * M))`.
    pub hot_fraction: f64,
    /// Share of each draw taken from the hot tier.
    pub hot_mass: f64,
    pub seed: u64,
    #[serde(default)]
    pub overlap: OverlapModel,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            m: 1_000_000,
            n: 16,
            d: 0.01,
            omega: 0.5,
            hot_fraction: 1.0,
            hot_mass: 1.0,
            seed: 0,
            overlap: OverlapModel::SharedCore,
        }
    }
}

impl WorkloadSpec {
    /// Non-zeros per node, `ceil(d * M)`.
    pub fn nnz(&self) -> usize {
        (self.d * self.m as f64).ceil() as usize
    }

    fn hot_len(&self) -> u64 {
        ((self.hot_fraction * self.m as f64).ceil() as u64).clamp(1, self.m)
    }

    fn core_len(&self) -> usize {
        ((self.omega * self.nnz() as f64).ceil() as usize).min(self.nnz())
    }

    fn pool_len(&self) -> usize {
        ((self.nnz() as f64 / self.omega).ceil() as usize).min(self.m as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleSpec(msg));
        if self.m == 0 || self.n == 0 {
            return bad("M and n must be positive".into());
        }
        if !(self.d > 0.0 && self.d <= 1.0) {
            return bad(format!("density {} outside (0, 1]", self.d));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return bad(format!("overlap {} outside [0, 1]", self.omega));
        }
        if !(self.hot_fraction > 0.0 && self.hot_fraction <= 1.0) {
            return bad(format!("hot fraction {} outside (0, 1]", self.hot_fraction));
        }
        if !(0.0..=1.0).contains(&self.hot_mass) {
            return bad(format!("hot mass {} outside [0, 1]", self.hot_mass));
        }
        match self.overlap {
            OverlapModel::SharedCore => {
                let core = self.core_len() as u64;
                let rest = (self.nnz() - self.core_len()) as u64;
                if core + self.n as u64 * rest > self.m {
                    return bad(format!(
                        "{} shared + {} x {} private indices exceed M = {}",
                        core, self.n, rest, self.m
                    ));
                }
            }
            OverlapModel::RandomPool => {
                if self.omega <= 0.0 {
                    return bad("random-pool overlap needs omega > 0".into());
                }
            }
        }
        Ok(())
    }

    /// Reads `key = value` lines. Blank lines and `#` comments are skipped;
    /// keys outside the workload vocabulary are ignored so one file can also
    /// carry experiment settings.
    pub fn from_config(text: &str) -> Result<Self> {
        Self::from_map(&parse_key_values(text)?)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut spec = WorkloadSpec::default();
        for (key, value) in map {
            let num = || {
                value.parse::<f64>().map_err(|_| {
                    Error::InfeasibleSpec(format!("{key}: expected a number, got {value:?}"))
                })
            };
            match key.as_str() {
                "M" | "m" => spec.m = num()? as u64,
                "n" => spec.n = num()? as usize,
                "d" | "density" => spec.d = num()?,
                "omega" => spec.omega = num()?,
                "hot_fraction" | "rho" => spec.hot_fraction = num()?,
                "hot_mass" | "phi" => spec.hot_mass = num()?,
                "seed" => {
                    spec.seed = value.parse().map_err(|_| {
                        Error::InfeasibleSpec(format!("seed: expected an integer, got {value:?}"))
                    })?
                }
                "overlap_model" => {
                    spec.overlap = match value.as_str() {
                        "shared-core" => OverlapModel::SharedCore,
                        "random-pool" => OverlapModel::RandomPool,
                        other => {
                            return Err(Error::InfeasibleSpec(format!("unknown overlap model {other:?}")))
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(spec)
    }
}

/// Parses `key = value` lines into a map; later keys override earlier ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InfeasibleSpec(format!("line {}: expected key = value", line_no + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

struct Taken {
    bits: Vec<u64>,
}

impl Taken {
    fn new(m: u64) -> Self {
        Taken {
            bits: vec![0; m.div_ceil(64) as usize],
        }
    }

    fn contains(&self, i: u64) -> bool {
        self.bits[(i / 64) as usize] >> (i % 64) & 1 == 1
    }

    fn insert(&mut self, i: u64) -> bool {
        let fresh = !self.contains(i);
        self.bits[(i / 64) as usize] |= 1 << (i % 64);
        fresh
    }
}

/// Hot and cold sampling regions with their remaining free counts.
struct Tiers {
    taken: Taken,
    ranges: [(u64, u64); 2],
    free: [u64; 2],
}

impl Tiers {
    fn new(m: u64, hot: u64) -> Self {
        Tiers {
            taken: Taken::new(m),
            ranges: [(0, hot), (hot, m)],
            free: [hot, m - hot],
        }
    }

    /// Draws `count` untaken indices, `round(hot_mass * count)` of them from
    /// the hot tier when it has room; a short tier spills into the other.
    fn draw(&mut self, rng: &mut ChaCha8Rng, count: usize, hot_mass: f64) -> Vec<u64> {
        let count = count as u64;
        let want_hot = ((hot_mass * count as f64).round() as u64).min(count);
        let hot = want_hot.min(self.free[0]).max(count.saturating_sub(self.free[1]));
        let mut out = Vec::with_capacity(count as usize);
        self.draw_tier(rng, 0, hot, &mut out);
        self.draw_tier(rng, 1, count - hot, &mut out);
        out
    }

    fn draw_tier(&mut self, rng: &mut ChaCha8Rng, tier: usize, count: u64, out: &mut Vec<u64>) {
        if count == 0 {
            return;
        }
        let (lo, hi) = self.ranges[tier];
        assert!(count <= self.free[tier], "tier has room by construction");
        if count * 2 <= self.free[tier] {
            let mut got = 0;
            while got < count {
                let i = rng.gen_range(lo..hi);
                if self.taken.insert(i) {
                    out.push(i);
                    got += 1;
                }
            }
        } else {
            let mut free: Vec<u64> = (lo..hi).filter(|&i| !self.taken.contains(i)).collect();
            let (picked, _) = free.partial_shuffle(rng, count as usize);
            for &i in picked.iter() {
                self.taken.insert(i);
                out.push(i);
            }
        }
        self.free[tier] -= count;
    }
}

fn node_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn finish(m: u64, mut indices: Vec<u64>, rng: &mut ChaCha8Rng) -> SparseTensor {
    indices.sort_unstable();
    let values = (0..indices.len()).map(|_| rng.gen_range(1..=16) as f32).collect();
    SparseTensor::new(m, indices, values).expect("generated indices are distinct and in range")
}

/// One tensor per node with exactly `ceil(d * M)` distinct indices and
/// integer values in `[1, 16]`.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<SparseTensor>> {
    spec.validate()?;
    let nnz = spec.nnz();
    let mut tiers = Tiers::new(spec.m, spec.hot_len());
    let mut shared_rng = node_rng(spec.seed, 0);
    match spec.overlap {
        OverlapModel::SharedCore => {
            let core = tiers.draw(&mut shared_rng, spec.core_len(), spec.hot_mass);
            (0..spec.n)
                .map(|node| {
                    let mut rng = node_rng(spec.seed, node as u64 + 1);
                    let mut indices = core.clone();
                    indices.extend(tiers.draw(&mut rng, nnz - core.len(), spec.hot_mass));
                    Ok(finish(spec.m, indices, &mut rng))
                })
                .collect()
        }
        OverlapModel::RandomPool => {
            let mut pool = tiers.draw(&mut shared_rng, spec.pool_len(), spec.hot_mass);
            pool.sort_unstable();
            (0..spec.n)
                .map(|node| {
                    let mut rng = node_rng(spec.seed, node as u64 + 1);
                    let indices = rand::seq::index::sample(&mut rng, pool.len(), nnz)
                        .into_iter()
                        .map(|p| pool[p])
                        .collect();
                    Ok(finish(spec.m, indices, &mut rng))
                })
                .collect()
        }
    }
}

/// Keeps the `ceil(fraction * M)` largest-magnitude entries, preferring lower
/// indices among equal magnitudes, and drops any zeros among them.
pub fn sparsify_topk(dense: &DenseTensor, fraction: f64) -> Result<SparseTensor> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidTensor(format!("top-k fraction {fraction} outside (0, 1]")));
    }
    let values = dense.values();
    let k = ((fraction * values.len() as f64).ceil() as usize).min(values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    let by_magnitude =
        |a: &usize, b: &usize| values[*b].abs().total_cmp(&values[*a].abs()).then(a.cmp(b));
    if k < order.len() {
        order.select_nth_unstable_by(k, by_magnitude);
        order.truncate(k);
    }
    let mut kept: Vec<usize> = order.into_iter().filter(|&i| values[i] != 0.0).collect();
    kept.sort_unstable();
    let vals = kept.iter().map(|&i| values[i]).collect();
    SparseTensor::new(dense.len(), kept.into_iter().map(|i| i as u64).collect(), vals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub mean_overlap: f64,
    /// `gamma[k]` for `k` in `1..=n`.
    pub gamma: BTreeMap<u64, f64>,
    /// Mean per-node skewness for each partition count.
    pub skew: BTreeMap<u64, f64>,
}

/// Mean pairwise overlap, densification curve and skewness curve of a tensor set.
pub fn measure(tensors: &[SparseTensor]) -> Result<Measurement> {
    if tensors.len() < 2 {
        return Err(Error::InvalidTensor("measurement needs at least two tensors".into()));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for a in 0..tensors.len() {
        for b in a + 1..tensors.len() {
            sum += overlap_ratio(&tensors[a], &tensors[b])?;
            pairs += 1;
        }
    }
    let profile = profile_sparsity(&[tensors.to_vec()])?;
    Ok(Measurement {
        mean_overlap: sum / pairs as f64,
        gamma: profile.gamma,
        skew: profile.skew,
    })
}
