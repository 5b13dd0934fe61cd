//! Experiment driver for the sparse-sync simulator.
//!
//! Every subcommand takes an [`ExperimentConfig`] and writes machine-readable
//! output under its `out` directory. Report columns are listed in
//! [`REPORT_COLUMNS`]; the JSON outputs validate against the schemas in
//! `crates/cli/schema/`.

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sparse_sync::codec::WireFormat;
use sparse_sync::costmodel::{
    profile_sparsity, select_scheme, t_allreduce_dense, t_bp, t_hc, t_ring_incremental, t_sparse_ps,
    CostInputs,
};
use sparse_sync::hashing::{bench_hashing, BenchCell, BenchGrid};
use sparse_sync::schemes::{run_scheme, SchemeConfig, SyncOptions};
use sparse_sync::simnet::SimNet;
use sparse_sync::tensor::{aggregate, write_sparse, SparseTensor, SparsityProfile};
use sparse_sync::workload::generate;

pub use config::{ExperimentConfig, Overrides, LANES_ENV};

/// Column order of `report.csv`. Appending is fine; reordering is not.
pub const REPORT_COLUMNS: [&str; 17] = [
    "scheme",
    "n",
    "trial",
    "seed",
    "simulated_time",
    "value_time",
    "model_value_time",
    "allreduce_time",
    "normalized_to_allreduce",
    "total_bits",
    "index_bits",
    "value_bits",
    "max_received_bits",
    "imbalance_push",
    "imbalance_pull",
    "oracle_equal",
    "error",
];

/// One scheme on one workload. Fields follow [`REPORT_COLUMNS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scheme: String,
    pub n: usize,
    pub trial: usize,
    /// Workload seed of this row.
    pub seed: u64,
    pub simulated_time: Option<f64>,
    pub value_time: Option<f64>,
    /// Closed-form prediction halved onto the `value_time` scale.
    pub model_value_time: Option<f64>,
    /// Dense ring AllReduce baseline for the same `M`, `n` and bandwidth.
    pub allreduce_time: f64,
    pub normalized_to_allreduce: Option<f64>,
    pub total_bits: Option<u64>,
    pub index_bits: Option<u64>,
    pub value_bits: Option<u64>,
    pub max_received_bits: Option<u64>,
    pub imbalance_push: Option<f64>,
    pub imbalance_pull: Option<f64>,
    pub oracle_equal: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.oracle_equal)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Directory holding the tensors of one trial at one node count.
pub fn trial_dir(out: &Path, trial: usize, n: usize) -> PathBuf {
    out.join(format!("trial{trial}")).join(format!("n{n}"))
}

/// Writes `node{i}.zspt` per node and a `profile.json` for every trial and
/// node count. Returns the tensor files in creation order.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for trial in 0..cfg.trials {
        for &n in &cfg.ns {
            let tensors = generate(&cfg.workload_for(trial, n))?;
            let dir = trial_dir(&cfg.out, trial, n);
            create_dir(&dir)?;
            for (i, t) in tensors.iter().enumerate() {
                let path = dir.join(format!("node{i}.zspt"));
                let mut w = BufWriter::new(File::create(&path)?);
                write_sparse(&mut w, t)?;
                w.flush()?;
                files.push(path);
            }
            write_json(&dir.join("profile.json"), &profile_sparsity(&[tensors])?)?;
        }
    }
    Ok(files)
}

fn scheme_config(cfg: &ExperimentConfig, name: &str) -> Result<SchemeConfig> {
    let mut scheme = SchemeConfig::preset(name)?;
    if let WireFormat::TensorBlock(_) = scheme.format {
        scheme.format = WireFormat::TensorBlock(cfg.block_size);
    }
    Ok(scheme)
}

/// Closed-form time of the scheme family the preset belongs to, if one exists.
fn model_time(name: &str, c: &CostInputs) -> Option<f64> {
    let t = match name {
        "balanced-parallelism" => t_bp(c),
        "sparcml" => t_hc(c),
        "ring-centralization" => t_ring_incremental(c),
        "omnireduce" => t_sparse_ps(c),
        _ => return None,
    };
    t.ok()
}

/// One generated workload and everything derived from it.
struct Case {
    trial: usize,
    seed: u64,
    inputs: Vec<SparseTensor>,
    expected: SparseTensor,
    costs: CostInputs,
    opts: SyncOptions,
}

fn run_row(cfg: &ExperimentConfig, name: &str, case: &Case) -> ReportRow {
    let Case { trial, seed, inputs, expected, costs, opts } = case;
    let n = inputs.len();
    let allreduce_time = t_allreduce_dense(costs);
    let mut row = ReportRow {
        scheme: name.to_string(),
        n,
        trial: *trial,
        seed: *seed,
        simulated_time: None,
        value_time: None,
        model_value_time: model_time(name, costs).map(|t| t / 2.0),
        allreduce_time,
        normalized_to_allreduce: None,
        total_bits: None,
        index_bits: None,
        value_bits: None,
        max_received_bits: None,
        imbalance_push: None,
        imbalance_pull: None,
        oracle_equal: false,
        error: None,
    };
    let outcome = scheme_config(cfg, name)
        .and_then(|scheme| Ok((scheme, SimNet::new(n, cfg.bandwidth)?)))
        .and_then(|(scheme, net)| Ok(run_scheme(&scheme, inputs, net, opts)?));
    match outcome {
        Ok(out) => {
            let traffic = &out.traffic;
            row.simulated_time = Some(traffic.simulated_time);
            row.value_time = Some(traffic.value_time());
            if allreduce_time > 0.0 {
                row.normalized_to_allreduce = Some(traffic.simulated_time / allreduce_time);
            }
            row.total_bits = Some(traffic.total_bits);
            row.index_bits = Some(traffic.total_index_bits);
            row.value_bits = Some(traffic.total_value_bits);
            row.max_received_bits = Some(traffic.max_received());
            row.imbalance_push = out.imbalance.map(|i| i.push);
            row.imbalance_pull = out.imbalance.map(|i| i.pull);
            row.oracle_equal = out.matches(expected);
        }
        Err(e) => row.error = Some(format!("{e:#}")),
    }
    row
}

fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<Vec<ReportRow>> {
    let opts = cfg.sync_options(trial);
    let mut rows = Vec::new();
    for &n in &cfg.ns {
        let spec = cfg.workload_for(trial, n);
        let inputs = generate(&spec)?;
        let profile = profile_sparsity(std::slice::from_ref(&inputs))?;
        let case = Case {
            trial,
            seed: spec.seed,
            expected: aggregate(&inputs)?,
            costs: CostInputs::from_profile(n, spec.m as f64, cfg.bandwidth / 32.0, profile),
            inputs,
            opts,
        };
        for name in &cfg.schemes {
            rows.push(run_row(cfg, name, &case));
        }
    }
    Ok(rows)
}

/// Runs every scheme on every `(n, trial)` workload. Trials run in parallel;
/// rows come out ordered by trial, then `n`, then scheme.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let per_trial: Vec<Vec<ReportRow>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t))
        .collect::<Result<_>>()?;
    Ok(Report {
        seed: cfg.seed(),
        config_hash: cfg.hash(),
        rows: per_trial.into_iter().flatten().collect(),
    })
}

pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(REPORT_COLUMNS)?;
    let num = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let int = |x: Option<u64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.scheme.clone(),
            r.n.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            num(r.simulated_time),
            num(r.value_time),
            num(r.model_value_time),
            r.allreduce_time.to_string(),
            num(r.normalized_to_allreduce),
            int(r.total_bits),
            int(r.index_bits),
            int(r.value_bits),
            int(r.max_received_bits),
            num(r.imbalance_push),
            num(r.imbalance_pull),
            r.oracle_equal.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json` and `report.csv` under `cfg.out`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<Report> {
    let report = run_experiment(cfg)?;
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("report.json"), &report)?;
    write_csv(&cfg.out.join("report.csv"), &report.rows)?;
    Ok(report)
}

/// Parses a profile file; any failure here is a malformed profile.
pub fn read_profile(path: &Path) -> Result<SparsityProfile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let profile: SparsityProfile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    profile.validate(1e-9).with_context(|| format!("checking {}", path.display()))?;
    Ok(profile)
}

pub fn cmd_select(profile: &SparsityProfile, n: usize) -> Result<&'static str> {
    Ok(select_scheme(profile, n)?.name())
}

/// One bench cell plus the retries it needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    #[serde(flatten)]
    pub cell: BenchCell,
    /// Overflow of the first attempt, kept after a successful retry.
    pub first_overflow: Option<String>,
    /// Times `r2` was doubled before the cell fit.
    pub r2_doublings: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub seed: u64,
    pub config_hash: String,
    pub n: usize,
    pub cells: Vec<BenchRow>,
}

/// Doublings tried before a cell's overflow is reported as final.
pub const MAX_R2_DOUBLINGS: u32 = 12;

/// Sweeps `r1` in {1, 2, 4} x |I| and `k` in 1..=4 over the first entry of
/// `ns`. A cell that overflows is retried with `r2` doubled.
pub fn bench(cfg: &ExperimentConfig) -> Result<BenchStats> {
    let n = cfg.ns[0];
    let tensors = generate(&cfg.workload_for(0, n))?;
    let grid = BenchGrid {
        partitions: n,
        seed: cfg.sync_options(0).hash_seed,
        r2_ratio: cfg.r2_ratio,
        lanes: cfg.lanes,
        ..BenchGrid::default()
    };
    let mut cells = Vec::new();
    for cell in bench_hashing(&tensors, &grid)? {
        let first_overflow = cell.overflow.clone();
        let mut current = cell;
        let mut doublings = 0;
        while current.overflow.is_some() && doublings < MAX_R2_DOUBLINGS {
            doublings += 1;
            let retry = BenchGrid {
                ks: vec![current.k],
                r1_multipliers: vec![current.r1_multiplier],
                r2_ratio: (current.r2_ratio * 2.0).max(1.0 / 64.0),
                ..grid.clone()
            };
            current = bench_hashing(&tensors, &retry)?.remove(0);
        }
        cells.push(BenchRow {
            cell: current,
            first_overflow,
            r2_doublings: doublings,
        });
    }
    Ok(BenchStats {
        seed: cfg.seed(),
        config_hash: cfg.hash(),
        n,
        cells,
    })
}

/// Writes `stats.json` under `cfg.out`.
pub fn cmd_bench_hash(cfg: &ExperimentConfig) -> Result<BenchStats> {
    let stats = bench(cfg)?;
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("stats.json"), &stats)?;
    Ok(stats)
}
