//! Experiment configuration read from `key = value` files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use sparse_sync::codec::{IndexWidth, DEFAULT_BLOCK_SIZE};
use sparse_sync::hashing::mix64;
use sparse_sync::schemes::{SyncOptions, SCHEME_NAMES};
use sparse_sync::workload::{parse_key_values, WorkloadSpec};

/// Keys consumed by [`WorkloadSpec::from_map`].
const WORKLOAD_KEYS: [&str; 12] = [
    "M", "m", "n", "d", "density", "omega", "hot_fraction", "rho", "hot_mass", "phi", "seed",
    "overlap_model",
];

/// Environment variable that overrides the hashing lane count.
pub const LANES_ENV: &str = "ZEN_SIM_LANES";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    /// Workload shape; `n` is replaced per run by each entry of `ns`.
    pub workload: WorkloadSpec,
    pub schemes: Vec<String>,
    pub ns: Vec<usize>,
    /// Link bandwidth in bits per second.
    pub bandwidth: f64,
    pub trials: usize,
    pub k: usize,
    pub r1_factor: f64,
    pub r2_ratio: f64,
    pub lanes: usize,
    pub coo_width: IndexWidth,
    pub block_size: usize,
    /// Not part of the hashed config, so reports do not depend on where they land.
    #[serde(skip)]
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let workload = WorkloadSpec::default();
        let opts = SyncOptions::default();
        ExperimentConfig {
            ns: vec![workload.n],
            workload,
            schemes: SCHEME_NAMES.iter().map(|s| s.to_string()).collect(),
            bandwidth: 1e9,
            trials: 1,
            k: opts.k,
            r1_factor: opts.r1_factor,
            r2_ratio: opts.r2_ratio,
            lanes: opts.lanes,
            coo_width: opts.coo_width,
            block_size: DEFAULT_BLOCK_SIZE,
            out: PathBuf::from("out"),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trials: Option<usize>,
    pub lanes: Option<usize>,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().ok().with_context(|| format!("{key}: cannot parse {value:?}"))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let map = parse_key_values(text)?;
        let mut cfg = ExperimentConfig {
            workload: WorkloadSpec::from_map(&map)?,
            ..Default::default()
        };
        cfg.ns = vec![cfg.workload.n];
        for (key, value) in &map {
            match key.as_str() {
                "schemes" => cfg.schemes = parse_list(key, value)?,
                "ns" | "n_list" => cfg.ns = parse_list(key, value)?,
                "bandwidth" => cfg.bandwidth = parse(key, value)?,
                "trials" => cfg.trials = parse(key, value)?,
                "k" => cfg.k = parse(key, value)?,
                "r1_factor" => cfg.r1_factor = parse(key, value)?,
                "r2_ratio" => cfg.r2_ratio = parse(key, value)?,
                "lanes" => cfg.lanes = parse(key, value)?,
                "coo_width" => {
                    cfg.coo_width = match value.as_str() {
                        "32" | "u32" => IndexWidth::U32,
                        "64" | "u64" => IndexWidth::U64,
                        other => bail!("coo_width: expected 32 or 64, got {other:?}"),
                    }
                }
                "block_size" => cfg.block_size = parse(key, value)?,
                "out" => cfg.out = PathBuf::from(value),
                k if WORKLOAD_KEYS.contains(&k) => {}
                other => bail!("unknown config key {other:?}"),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::from_text(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => Self::default(),
        };
        if let Some(seed) = overrides.seed {
            cfg.workload.seed = seed;
        }
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        if let Some(trials) = overrides.trials {
            cfg.trials = trials;
        }
        if let Some(lanes) = overrides.lanes {
            cfg.lanes = lanes;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        if self.ns.is_empty() || self.ns.contains(&0) {
            bail!("ns must list positive node counts");
        }
        if self.schemes.is_empty() {
            bail!("no schemes selected");
        }
        if let Some(bad) = self.schemes.iter().find(|s| !SCHEME_NAMES.contains(&s.as_str())) {
            bail!("unknown scheme {bad:?}; known: {}", SCHEME_NAMES.join(", "));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            bail!("bandwidth must be positive");
        }
        if self.lanes == 0 || self.k == 0 || self.block_size == 0 {
            bail!("lanes, k and block_size must be positive");
        }
        for &n in &self.ns {
            self.workload_for(0, n).validate()?;
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.workload.seed
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Seed owned by one trial; every other seed derives from it.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        mix64(self.seed() ^ mix64(trial as u64 + 1))
    }

    pub fn workload_for(&self, trial: usize, n: usize) -> WorkloadSpec {
        WorkloadSpec {
            n,
            seed: mix64(self.trial_seed(trial) ^ n as u64),
            ..self.workload.clone()
        }
    }

    pub fn sync_options(&self, trial: usize) -> SyncOptions {
        SyncOptions {
            hash_seed: mix64(self.trial_seed(trial) ^ 0x5eed),
            k: self.k,
            r1_factor: self.r1_factor,
            r2_ratio: self.r2_ratio,
            lanes: self.lanes,
            coo_width: self.coo_width,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_experiment_and_workload_keys() {
        let cfg = ExperimentConfig::from_text(
            "M = 5000\nd = 0.02\nschemes = agsparse, sparcml\nns = 2,4\ntrials = 3\ncoo_width = 32\n",
        )
        .unwrap();
        assert_eq!(cfg.workload.m, 5000);
        assert_eq!(cfg.schemes, ["agsparse", "sparcml"]);
        assert_eq!(cfg.ns, [2, 4]);
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.coo_width, IndexWidth::U32);
    }

    #[test]
    fn rejects_unknown_keys_and_schemes() {
        assert!(ExperimentConfig::from_text("colour = blue\n").is_err());
        let cfg = ExperimentConfig::from_text("schemes = allgather\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            out: PathBuf::from("elsewhere"),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig {
            trials: 2,
            ..a.clone()
        };
        assert_ne!(a.hash(), c.hash());
    }
}
