//! Executable synchronization schemes over the simulated network.
//!
//! A scheme is a point in a four-dimensional design space (communication
//! pattern, aggregation timing, partitioning, balance) plus a wire format.
//! Every run leaves each node holding the sum of all inputs and returns the
//! simulator's traffic report.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::{decode, encode, EncodedMessage, HashUniverse, IndexWidth, WireFormat};
use crate::error::{Error, Result};
use crate::hashing::{
    hierarchical_hash_with_stats, imbalance_pull, imbalance_push_counts, mix64, CollisionStats,
    HashConfig, HashFamily, PartitionedSparseTensor,
};
use crate::simnet::{SimNet, TrafficReport};
use crate::tensor::{aggregate, even_ranges, SparseTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Communication {
    Ring,
    Hierarchy,
    PointToPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aggregation {
    Incremental,
    OneShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Partition {
    Centralization,
    Parallelism,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Balance {
    Balanced,
    Imbalanced,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub communication: Communication,
    pub aggregation: Aggregation,
    pub partition: Partition,
    pub balance: Balance,
    pub format: WireFormat,
}

/// Registry names accepted by [`SchemeConfig::preset`].
pub const SCHEME_NAMES: [&str; 5] = [
    "agsparse",
    "sparcml",
    "omnireduce",
    "balanced-parallelism",
    "ring-centralization",
];

impl SchemeConfig {
    /// Validates that balance is meaningful exactly for parallel partitioning.
    pub fn new(
        communication: Communication,
        aggregation: Aggregation,
        partition: Partition,
        balance: Balance,
        format: WireFormat,
    ) -> Result<Self> {
        let centralized = partition == Partition::Centralization;
        if centralized != (balance == Balance::NotApplicable) {
            return Err(Error::UnsupportedCombination(format!(
                "{partition:?} partitioning with {balance:?} balance"
            )));
        }
        Ok(SchemeConfig {
            communication,
            aggregation,
            partition,
            balance,
            format,
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        use Aggregation::*;
        use Communication::*;
        let cfg = match name {
            "agsparse" => (Ring, OneShot, Partition::Centralization, Balance::NotApplicable, WireFormat::COO),
            "sparcml" => (Hierarchy, Incremental, Partition::Centralization, Balance::NotApplicable, WireFormat::COO),
            "omnireduce" => (
                PointToPoint,
                Incremental,
                Partition::Parallelism,
                Balance::Imbalanced,
                WireFormat::tensor_block(),
            ),
            "balanced-parallelism" => (
                PointToPoint,
                Incremental,
                Partition::Parallelism,
                Balance::Balanced,
                WireFormat::HashBitmap,
            ),
            "ring-centralization" => (Ring, Incremental, Partition::Centralization, Balance::NotApplicable, WireFormat::COO),
            other => {
                return Err(Error::UnsupportedCombination(format!("unknown scheme {other:?}")))
            }
        };
        Self::new(cfg.0, cfg.1, cfg.2, cfg.3, cfg.4)
    }
}

/// Knobs shared by the schemes; only Balanced Parallelism reads the hashing ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncOptions {
    /// Seed of the shared partition hash; slot seeds are derived per node.
    pub hash_seed: u64,
    pub k: usize,
    pub r1_factor: f64,
    pub r2_ratio: f64,
    pub lanes: usize,
    /// Index width of COO messages in parallel Push.
    pub coo_width: IndexWidth,
}

impl Default for SyncOptions {
    fn default() -> Self {
        SyncOptions {
            hash_seed: 0x5eed,
            k: 3,
            r1_factor: 2.0,
            r2_ratio: 0.1,
            lanes: 1,
            coo_width: IndexWidth::U64,
        }
    }
}

impl SyncOptions {
    /// Per-node families sharing `hash_seed` for `h0`.
    pub fn families(&self, n: usize) -> Result<Vec<HashFamily>> {
        (0..n)
            .map(|node| {
                let worker_seed = mix64(self.hash_seed ^ mix64(node as u64 + 1));
                HashFamily::derived(self.hash_seed, worker_seed, n, self.k)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Imbalance {
    pub push: f64,
    pub pull: f64,
}

#[derive(Debug, Clone)]
pub struct SyncOutcome {
    pub results: Vec<SparseTensor>,
    pub traffic: TrafficReport,
    /// Push and Pull imbalance of parallel schemes.
    pub imbalance: Option<Imbalance>,
    /// Per-node hashing statistics of Balanced Parallelism.
    pub collisions: Option<Vec<CollisionStats>>,
}

impl SyncOutcome {
    pub fn is_uniform(&self) -> bool {
        self.results.windows(2).all(|w| w[0] == w[1])
    }

    /// Every node holds exactly `aggregate(inputs)`.
    pub fn matches(&self, expected: &SparseTensor) -> bool {
        self.results.iter().all(|r| r == expected)
    }
}

fn check_inputs(inputs: &[SparseTensor], net: &SimNet) -> Result<u64> {
    if inputs.len() < 2 {
        return Err(Error::InvalidNetwork(format!(
            "synchronization needs at least two nodes, got {}",
            inputs.len()
        )));
    }
    if net.nodes() != inputs.len() {
        return Err(Error::InvalidNetwork(format!(
            "{} inputs on a {}-node network",
            inputs.len(),
            net.nodes()
        )));
    }
    let m = inputs[0].universe();
    if let Some(t) = inputs.iter().find(|t| t.universe() != m) {
        return Err(Error::UniverseMismatch {
            expected: m,
            found: t.universe(),
        });
    }
    Ok(m)
}

fn check_power_of_two(n: usize) -> Result<()> {
    if n.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::NonPowerOfTwo(n))
    }
}

fn plain_format(format: WireFormat) -> Result<WireFormat> {
    if format == WireFormat::HashBitmap {
        return Err(Error::UnsupportedCombination(
            "hash bitmaps need a parallel partition".into(),
        ));
    }
    Ok(format)
}

fn finish(
    results: Vec<SparseTensor>,
    net: SimNet,
    imbalance: Option<Imbalance>,
    collisions: Option<Vec<CollisionStats>>,
) -> Result<SyncOutcome> {
    Ok(SyncOutcome {
        results,
        traffic: net.finalize()?,
        imbalance,
        collisions,
    })
}

/// Allgather of raw tensors under `pattern`, aggregated once at the end.
///
/// Point-to-point sends every tensor directly in one stage; Ring forwards
/// one tensor per stage over `n-1` stages; Hierarchy is recursive doubling
/// over `log n` stages, forwarding every tensor gathered so far.
pub fn run_agsparse(
    inputs: &[SparseTensor],
    mut net: SimNet,
    pattern: Communication,
    format: WireFormat,
) -> Result<SyncOutcome> {
    let n = inputs.len();
    check_inputs(inputs, &net)?;
    let format = plain_format(format)?;
    let own: Vec<Arc<EncodedMessage>> = inputs
        .iter()
        .map(|t| encode(t, format, None).map(Arc::new))
        .collect::<Result<_>>()?;
    // gathered[v][u] is node u's message once it has reached node v.
    let mut gathered: Vec<Vec<Option<Arc<EncodedMessage>>>> = (0..n)
        .map(|v| (0..n).map(|u| (u == v).then(|| Arc::clone(&own[v]))).collect())
        .collect();

    match pattern {
        Communication::PointToPoint => {
            for from in 0..n {
                for to in (0..n).filter(|&to| to != from) {
                    net.send(0, from, to, Arc::clone(&own[from]))?;
                }
            }
            for (to, inbox) in net.deliver().into_iter().enumerate() {
                for d in inbox {
                    gathered[to][d.from] = Some(d.msg);
                }
            }
        }
        Communication::Ring => {
            for stage in 0..n - 1 {
                for from in 0..n {
                    let origin = (from + n - stage) % n;
                    let msg = gathered[from][origin].clone().expect("ring forwards what it holds");
                    net.send(stage, from, (from + 1) % n, msg)?;
                }
                for (to, inbox) in net.deliver().into_iter().enumerate() {
                    let origin = (to + n - 1 - stage) % n;
                    for d in inbox {
                        gathered[to][origin] = Some(d.msg);
                    }
                }
            }
        }
        Communication::Hierarchy => {
            check_power_of_two(n)?;
            let mut order: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
            for stage in 0..n.trailing_zeros() as usize {
                for from in 0..n {
                    let partner = from ^ (1 << stage);
                    for &origin in &order[from] {
                        let msg = gathered[from][origin].clone().expect("held");
                        net.send(stage, from, partner, msg)?;
                    }
                }
                net.deliver();
                let snapshot = order.clone();
                for v in 0..n {
                    let partner = v ^ (1 << stage);
                    for &origin in &snapshot[partner] {
                        gathered[v][origin] = gathered[partner][origin].clone();
                        order[v].push(origin);
                    }
                }
            }
        }
    }

    let results = gathered
        .into_iter()
        .map(|msgs| {
            let tensors = msgs
                .into_iter()
                .map(|m| decode(&m.expect("allgather is complete"), None))
                .collect::<Result<Vec<_>>>()?;
            aggregate(&tensors)
        })
        .collect::<Result<Vec<_>>>()?;
    finish(results, net, None, None)
}

/// Recursive doubling: at stage `i` each node swaps its running sum with the
/// node at distance `2^i` and adds what it receives.
pub fn run_hier_centralization(
    inputs: &[SparseTensor],
    mut net: SimNet,
    format: WireFormat,
) -> Result<SyncOutcome> {
    let n = inputs.len();
    check_inputs(inputs, &net)?;
    check_power_of_two(n)?;
    let format = plain_format(format)?;
    let mut acc: Vec<SparseTensor> = inputs.iter().map(|t| t.sorted()).collect();
    for stage in 0..n.trailing_zeros() as usize {
        for from in 0..n {
            let msg = Arc::new(encode(&acc[from], format, None)?);
            net.send(stage, from, from ^ (1 << stage), msg)?;
        }
        for (to, inbox) in net.deliver().into_iter().enumerate() {
            for d in inbox {
                let theirs = decode(&d.msg, None)?;
                // Lower-ranked group first so both partners sum in the same order.
                acc[to] = if d.from < to {
                    aggregate([&theirs, &acc[to]])?
                } else {
                    aggregate([&acc[to], &theirs])?
                };
            }
        }
    }
    finish(acc, net, None, None)
}

/// Ring with incremental aggregation: each node forwards its running sum to
/// its successor, which adds its own tensor; after `n-1` stages every node
/// holds the full sum.
pub fn run_ring_centralization(
    inputs: &[SparseTensor],
    mut net: SimNet,
    format: WireFormat,
) -> Result<SyncOutcome> {
    let n = inputs.len();
    check_inputs(inputs, &net)?;
    let format = plain_format(format)?;
    let own: Vec<SparseTensor> = inputs.iter().map(|t| t.sorted()).collect();
    let mut acc = own.clone();
    for stage in 0..n - 1 {
        for from in 0..n {
            let msg = Arc::new(encode(&acc[from], format, None)?);
            net.send(stage, from, (from + 1) % n, msg)?;
        }
        for (to, inbox) in net.deliver().into_iter().enumerate() {
            for d in inbox {
                acc[to] = aggregate([&decode(&d.msg, None)?, &own[to]])?;
            }
        }
    }
    finish(acc, net, None, None)
}

/// Parameter-server style parallelism over `n` even contiguous ranges.
///
/// Push sends each range as non-zero tensor blocks to the range's owner,
/// which sums on arrival; Pull sends the owner's sum back to every node.
pub fn run_omnireduce_like(
    inputs: &[SparseTensor],
    net: SimNet,
    block_size: usize,
) -> Result<SyncOutcome> {
    run_range_parallel(inputs, net, WireFormat::TensorBlock(block_size))
}

fn run_range_parallel(
    inputs: &[SparseTensor],
    net: SimNet,
    format: WireFormat,
) -> Result<SyncOutcome> {
    let m = check_inputs(inputs, &net)?;
    let format = plain_format(format)?;
    let ranges = even_ranges(m, inputs.len());
    let parts: Vec<PartitionedSparseTensor> = inputs
        .iter()
        .map(|t| {
            let sorted = t.sorted();
            PartitionedSparseTensor::new(ranges.iter().map(|r| sorted.restrict(r.clone())).collect())
        })
        .collect();
    push_pull(&parts, net, format, format, None, None)
}

/// Push partition `j` of every node to node `j` in stage 0, sum on arrival,
/// then send each sum to every other node in stage 1 and union the parts.
fn push_pull(
    parts: &[PartitionedSparseTensor],
    mut net: SimNet,
    push_format: WireFormat,
    pull_format: WireFormat,
    universes: Option<&[HashUniverse]>,
    collisions: Option<Vec<CollisionStats>>,
) -> Result<SyncOutcome> {
    let n = parts.len();
    let universe_of = |j: usize| universes.map(|u| &u[j]);
    for (from, p) in parts.iter().enumerate() {
        for (to, part) in p.parts().iter().enumerate() {
            if to != from {
                net.send(0, from, to, Arc::new(encode(part, push_format, universe_of(to))?))?;
            }
        }
    }
    let mut sums = Vec::with_capacity(n);
    for (server, inbox) in net.deliver().into_iter().enumerate() {
        let mut pieces: Vec<SparseTensor> = Vec::with_capacity(n);
        let mut arrivals = inbox.into_iter().peekable();
        for sender in 0..n {
            if sender == server {
                pieces.push(parts[server].parts()[server].clone());
            } else if arrivals.peek().is_some_and(|d| d.from == sender) {
                let d = arrivals.next().expect("peeked");
                pieces.push(decode(&d.msg, universe_of(server))?);
            }
        }
        sums.push(aggregate(&pieces)?);
    }

    for (from, sum) in sums.iter().enumerate() {
        let msg = Arc::new(encode(sum, pull_format, universe_of(from))?);
        for to in (0..n).filter(|&to| to != from) {
            net.send(1, from, to, Arc::clone(&msg))?;
        }
    }
    let mut results = Vec::with_capacity(n);
    for (node, inbox) in net.deliver().into_iter().enumerate() {
        let mut pieces = vec![None; n];
        pieces[node] = Some(sums[node].clone());
        for d in inbox {
            pieces[d.from] = Some(decode(&d.msg, universe_of(d.from))?);
        }
        let pieces: Vec<SparseTensor> = pieces.into_iter().map(|p| p.expect("all parts pulled")).collect();
        results.push(aggregate(&pieces)?);
    }
    let imbalance = measure_imbalance(parts, &sums)?;
    finish(results, net, Some(imbalance), collisions)
}

/// Push and Pull imbalance, skipping workers with nothing to send; an empty load counts as balanced.
fn measure_imbalance(parts: &[PartitionedSparseTensor], sums: &[SparseTensor]) -> Result<Imbalance> {
    let counts: Vec<Vec<usize>> = parts
        .iter()
        .map(|p| p.counts())
        .filter(|c| c.iter().any(|&x| x > 0))
        .collect();
    let push = if counts.is_empty() { 1.0 } else { imbalance_push_counts(&counts)? };
    let pull = if sums.iter().all(|s| s.is_empty()) { 1.0 } else { imbalance_pull(sums)? };
    Ok(Imbalance { push, pull })
}

/// Balanced Parallelism: hierarchical hashing into `n` balanced partitions,
/// COO Push to the owning server, and a Pull in `pull_format` (normally a
/// hash bitmap over the server's universe).
pub fn run_balanced_parallelism(
    inputs: &[SparseTensor],
    net: SimNet,
    families: &[HashFamily],
    configs: &[HashConfig],
    push_width: IndexWidth,
    pull_format: WireFormat,
) -> Result<SyncOutcome> {
    let m = check_inputs(inputs, &net)?;
    let n = inputs.len();
    if families.len() != n || configs.len() != n {
        return Err(Error::InvalidHashParams(format!(
            "{n} nodes need {n} hash families and configs, got {} and {}",
            families.len(),
            configs.len()
        )));
    }
    let seed0 = families[0].seed0();
    if let Some(f) = families.iter().find(|f| f.seed0() != seed0 || f.partitions() != n) {
        return Err(Error::InvalidHashParams(format!(
            "partition hash must be shared: seed {} over {} partitions vs seed {seed0} over {n}",
            f.seed0(),
            f.partitions()
        )));
    }
    let mut parts = Vec::with_capacity(n);
    let mut stats = Vec::with_capacity(n);
    for ((t, family), &config) in inputs.iter().zip(families).zip(configs) {
        let (p, s) = hierarchical_hash_with_stats(t, family, config)?;
        parts.push(p);
        stats.push(s);
    }
    let universes = (pull_format == WireFormat::HashBitmap).then(|| HashUniverse::cached(m, &families[0]));
    push_pull(
        &parts,
        net,
        WireFormat::Coo(push_width),
        pull_format,
        universes.as_deref().map(|u| u.as_slice()),
        Some(stats),
    )
}

/// Runs whichever supported scheme `cfg` names.
pub fn run_scheme(
    cfg: &SchemeConfig,
    inputs: &[SparseTensor],
    net: SimNet,
    opts: &SyncOptions,
) -> Result<SyncOutcome> {
    use Aggregation::*;
    use Communication::*;
    let reject = || {
        Err(Error::UnsupportedCombination(format!(
            "{:?} / {:?} / {:?} / {:?}",
            cfg.communication, cfg.aggregation, cfg.partition, cfg.balance
        )))
    };
    match (cfg.communication, cfg.aggregation, cfg.partition, cfg.balance) {
        (pattern, OneShot, Partition::Centralization, Balance::NotApplicable) => {
            run_agsparse(inputs, net, pattern, cfg.format)
        }
        (Hierarchy, Incremental, Partition::Centralization, Balance::NotApplicable) => {
            run_hier_centralization(inputs, net, cfg.format)
        }
        (Ring, Incremental, Partition::Centralization, Balance::NotApplicable) => {
            run_ring_centralization(inputs, net, cfg.format)
        }
        (PointToPoint, Incremental, Partition::Parallelism, Balance::Imbalanced) => {
            run_range_parallel(inputs, net, cfg.format)
        }
        (PointToPoint, Incremental, Partition::Parallelism, Balance::Balanced) => {
            let n = inputs.len();
            let families = opts.families(n)?;
            let configs: Vec<HashConfig> = inputs
                .iter()
                .zip(&families)
                .map(|(t, f)| HashConfig::fitted(t, f, opts.r1_factor, opts.r2_ratio, opts.lanes))
                .collect();
            run_balanced_parallelism(inputs, net, &families, &configs, opts.coo_width, cfg.format)
        }
        _ => reject(),
    }
}
