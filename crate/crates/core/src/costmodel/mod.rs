//! Closed-form communication times and the runtime scheme selector.
//!
//! Times are in units of `1/b` where `b` counts 32-bit words per time unit;
//! a COO entry is two words, hence the `2 M d` factors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{aggregate, density, skewness_ratio, SparseTensor, SparsityProfile};

#[derive(Debug, Clone, PartialEq)]
pub struct CostInputs {
    pub n: usize,
    pub m: f64,
    pub d: f64,
    pub b: f64,
    /// Skewness ratio under `n` contiguous partitions.
    pub s: f64,
    /// Rounds of the broadcast collective used for Pull.
    pub rounds: f64,
    pub profile: SparsityProfile,
}

impl CostInputs {
    /// Inputs drawn from a measured profile: `d` from the profile, `s` from
    /// `skew[n]` when present (else 1), and binomial-tree broadcast rounds.
    pub fn from_profile(n: usize, m: f64, b: f64, profile: SparsityProfile) -> Self {
        CostInputs {
            n,
            m,
            d: profile.d,
            b,
            s: profile.skew(n as u64).unwrap_or(1.0),
            rounds: (n.max(1) as f64).log2().ceil(),
            profile,
        }
    }

    fn unit(&self) -> f64 {
        self.m * self.d / self.b
    }

    fn gamma(&self, k: usize) -> Result<f64> {
        if k == 1 {
            return Ok(self.profile.gamma.get(&1).copied().unwrap_or(1.0));
        }
        self.profile.gamma(k as u64)
    }
}

fn log2_exact(n: usize) -> Result<u32> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NonPowerOfTwo(n));
    }
    Ok(n.trailing_zeros())
}

/// Coefficient of `M d / b` in the Balanced Parallelism time: `2 (n-1)/n (gamma_n + 1)`.
pub fn bp_coefficient(n: usize, gamma_n: f64) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    2.0 * (n as f64 - 1.0) / n as f64 * (gamma_n + 1.0)
}

/// Coefficient of `M d / b` in the Hierarchical Centralization time: `2 sum_i gamma_{2^(i-1)}`.
pub fn hc_coefficient(profile: &SparsityProfile, n: usize) -> Result<f64> {
    let steps = log2_exact(n)?;
    let mut sum = 0.0;
    for i in 0..steps {
        let k = 1u64 << i;
        sum += if k == 1 {
            profile.gamma.get(&1).copied().unwrap_or(1.0)
        } else {
            profile.gamma(k)?
        };
    }
    Ok(2.0 * sum)
}

pub fn t_bp(c: &CostInputs) -> Result<f64> {
    if c.n <= 1 {
        return Ok(0.0);
    }
    Ok(bp_coefficient(c.n, c.gamma(c.n)?) * c.unit())
}

pub fn t_hc(c: &CostInputs) -> Result<f64> {
    Ok(hc_coefficient(&c.profile, c.n)? * c.unit())
}

/// Sparse parameter server with point-to-point Pull; skew scales both steps.
pub fn t_sparse_ps(c: &CostInputs) -> Result<f64> {
    Ok(c.s * t_bp(c)?)
}

/// Sparse parameter server whose Pull is a `rounds`-round broadcast.
pub fn t_sparse_ps_broadcast(c: &CostInputs) -> Result<f64> {
    let n = c.n as f64;
    let push = 2.0 * (n - 1.0) * c.s * c.unit() / n;
    let pull = 2.0 * c.rounds * c.gamma(c.n)? * c.unit();
    Ok(push + pull)
}

/// Ring with incremental aggregation over `n-1` stages; needs `gamma[k]` for every `k < n`.
pub fn t_ring_incremental(c: &CostInputs) -> Result<f64> {
    let mut sum = 0.0;
    for k in 1..c.n {
        sum += c.gamma(k)?;
    }
    Ok(2.0 * sum * c.unit() / c.n as f64)
}

/// Lower bound for hierarchy with incremental aggregation: `2 (n-1) M d / n / b`.
pub fn t_hierarchy_incremental_lb(c: &CostInputs) -> Result<f64> {
    let n = c.n as f64;
    Ok(2.0 * (n - 1.0) * c.unit() / n)
}

/// Dense ring AllReduce: `2 (n-1)/n M / b`.
pub fn t_allreduce_dense(c: &CostInputs) -> f64 {
    let n = c.n as f64;
    2.0 * (n - 1.0) / n * c.m / c.b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeChoice {
    BalancedParallelism,
    HierarchicalCentralization,
}

impl SchemeChoice {
    pub fn name(self) -> &'static str {
        match self {
            SchemeChoice::BalancedParallelism => "balanced-parallelism",
            SchemeChoice::HierarchicalCentralization => "hierarchical-centralization",
        }
    }
}

/// Picks the cheaper of Balanced Parallelism and Hierarchical Centralization; ties go to the former.
pub fn select_scheme(profile: &SparsityProfile, n: usize) -> Result<SchemeChoice> {
    log2_exact(n)?;
    if n == 1 {
        return Ok(SchemeChoice::BalancedParallelism);
    }
    let gamma_n = profile.gamma(n as u64)?;
    let bp = bp_coefficient(n, gamma_n);
    let hc = hc_coefficient(profile, n)?;
    Ok(if hc < bp {
        SchemeChoice::HierarchicalCentralization
    } else {
        SchemeChoice::BalancedParallelism
    })
}

/// Measures a profile from profiling rounds, each holding one tensor per node.
///
/// `d` is the mean density; `gamma[k]` the size of the union of the first
/// `k` tensors over the round's mean size, for every `k` in `1..=n`; `skew[p]`
/// the mean per-node skewness for `p` in the powers of two up to `n` and `n`
/// itself. Each entry is averaged over rounds.
pub fn profile_sparsity(runs: &[Vec<SparseTensor>]) -> Result<SparsityProfile> {
    let first = runs.first().ok_or(Error::EmptyInput)?;
    let n = first.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let universe = first[0].universe();
    let mut parts: Vec<u64> = (0..).map(|i| 1u64 << i).take_while(|&p| p <= n as u64).collect();
    if !parts.contains(&(n as u64)) {
        parts.push(n as u64);
    }

    let mut profile = SparsityProfile {
        d: 0.0,
        gamma: Default::default(),
        skew: Default::default(),
    };
    for round in runs {
        if round.len() != n {
            return Err(Error::InvalidTensor(format!(
                "profiling rounds hold {} and {} tensors",
                n,
                round.len()
            )));
        }
        if let Some(t) = round.iter().find(|t| t.universe() != universe) {
            return Err(Error::UniverseMismatch {
                expected: universe,
                found: t.universe(),
            });
        }
        if round.iter().any(|t| t.is_empty()) {
            return Err(Error::EmptyTensor);
        }
        let mean_nnz = round.iter().map(|t| t.nnz()).sum::<usize>() as f64 / n as f64;
        profile.d += round.iter().map(density).sum::<f64>() / n as f64;

        let mut union: Vec<u64> = Vec::new();
        for (k, t) in round.iter().enumerate() {
            union = merge_union(&union, aggregate([t])?.indices());
            *profile.gamma.entry(k as u64 + 1).or_insert(0.0) += union.len() as f64 / mean_nnz;
        }
        for &p in &parts {
            let mut s = 0.0;
            for t in round {
                s += skewness_ratio(t, p as usize)?;
            }
            *profile.skew.entry(p).or_insert(0.0) += s / n as f64;
        }
    }
    let rounds = runs.len() as f64;
    profile.d /= rounds;
    profile.gamma.values_mut().for_each(|g| *g /= rounds);
    profile.skew.values_mut().for_each(|s| *s /= rounds);
    Ok(profile)
}

fn merge_union(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Profile where `gamma[k] = f(k)` for every `k` in `1..=n`.
pub fn analytic_profile(d: f64, n: usize, f: impl Fn(u64) -> f64) -> SparsityProfile {
    SparsityProfile {
        d,
        gamma: (1..=n as u64).map(|k| (k, f(k))).collect(),
        skew: Default::default(),
    }
}
