use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use sparse_sync_cli::{
    cmd_bench_hash, cmd_generate, cmd_run, cmd_select, read_profile, ExperimentConfig, Overrides, LANES_ENV,
};

/// Simulates sparse gradient synchronization schemes and reports their traffic.
#[derive(Parser)]
#[command(name = "sparse-sync", version)]
struct Cli {
    /// Experiment config of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the number of trials.
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write per-node tensor files and sparsity profiles.
    Generate,
    /// Run every scheme against the aggregation oracle; exits 1 if any row fails.
    Run,
    /// Print the scheme the cost model picks for a profile.
    Select {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        n: usize,
    },
    /// Sweep hashing parameters and record serial writes and loss.
    BenchHash,
}

fn lanes_from_env() -> Result<Option<usize>> {
    match std::env::var(LANES_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{LANES_ENV}={v:?}"))?)),
        Err(_) => Ok(None),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        trials: cli.trials,
        lanes: lanes_from_env()?,
    };
    ExperimentConfig::load(cli.config.as_deref(), &overrides)
}

fn execute(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Generate => {
            let files = cmd_generate(&load_config(cli)?)?;
            eprintln!("wrote {} tensor files", files.len());
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            let report = cmd_run(&cfg)?;
            let failed = report.rows.iter().filter(|r| !r.oracle_equal).count();
            eprintln!(
                "{} rows, {failed} failed; report in {}",
                report.rows.len(),
                cfg.out.display()
            );
            if failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Select { profile, n } => {
            let profile = read_profile(profile)?;
            println!("{}", cmd_select(&profile, *n)?);
        }
        Command::BenchHash => {
            let cfg = load_config(cli)?;
            let stats = cmd_bench_hash(&cfg)?;
            eprintln!("{} cells; stats in {}", stats.cells.len(), cfg.out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
