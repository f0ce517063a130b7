// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use std::fs::File;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use revive_afl::harness::{
    render_histogram, render_summary, run_experiment, staleness_histogram, summarize, write_run,
    ExperimentConfig, StrategyKind, Target,
};
use revive_afl::sim::read_trace;

#[derive(Parser)]
#[command(
    name = "revive",
    version,
    about = "Simulated asynchronous federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics and traces per seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare run directories by accuracy and time-to-target.
    Summarize {
        /// Directory whose subdirectories are `run` outputs.
        #[arg(long)]
        runs: PathBuf,
        /// Target as a fraction of the best fedbuff accuracy per seed.
        #[arg(long, default_value_t = 0.85)]
        target_frac: f64,
        /// Absolute accuracy target; overrides --target-frac.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Print the staleness distribution of a trace file.
    Histogram {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, seed, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = match (out, &cfg.out_dir) {
                (Some(dir), _) => dir,
                (None, Some(dir)) => PathBuf::from(dir),
                (None, None) => bail!("no output directory: pass --out or set out_dir"),
            };
            let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
            for seed in seeds {
                log::info!("{} seed {seed}", cfg.strategy.kind.name());
                let output =
                    run_experiment(&cfg, seed).with_context(|| format!("seed {seed} failed"))?;
                write_run(&out, &cfg, seed, &output)?;
                if let Some(last) = output.metrics.last() {
                    println!(
                        "seed {seed}: {} updates, final accuracy {:.4}, best {:.4}",
                        last.server_updates, last.test_accuracy, last.best_so_far
                    );
                }
            }
        }
        Command::Summarize {
            runs,
            target_frac,
            target,
        } => {
            let target = match target {
                Some(t) => Target::Absolute(t),
                None => Target::Relative {
                    fraction: target_frac,
                    reference: StrategyKind::Fedbuff,
                },
            };
            print!("{}", render_summary(&summarize(&runs, target)?));
        }
        Command::Histogram { trace } => {
            let rows =
                read_trace(File::open(&trace).with_context(|| trace.display().to_string())?)?;
            let staleness: Vec<u64> = rows.iter().map(|r| r.staleness).collect();
            print!("{}", render_histogram(&staleness_histogram(&staleness)?));
        }
    }
    Ok(())
}
