// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

//! Experiment runner: configuration, the server loop for every strategy,
//! evaluation, and the analyses behind the CLI.
//!
//! A run directory holds the configuration it was produced with plus one
//! metrics and one trace file per seed:
//!
//! ```text
//! runs/fedbuff/config.toml
//! runs/fedbuff/metrics_seed0.csv
//! runs/fedbuff/trace_seed0.csv
//! ```

mod config;
mod metrics;
mod run;

pub use config::{
    DatasetConfig, EvalConfig, ExperimentConfig, ModelConfig, PartitionConfig, StrategyConfig,
    StrategyKind,
};
pub use metrics::{
    best_so_far, evaluate, format_time_to_target, nearest_rank, read_metrics, staleness_histogram,
    time_to_target, write_metrics, MetricsRecord, StalenessHistogram,
};
pub use run::{run_experiment, RunOutput, Setup};

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sim::write_trace;

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics_seed{seed}.csv"))
}

pub fn trace_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("trace_seed{seed}.csv"))
}

/// Writes the configuration and one seed's outputs into `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, seed: u64, output: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    write_metrics(
        &output.metrics,
        BufWriter::new(File::create(metrics_path(dir, seed))?),
    )?;
    write_trace(
        &output.trace,
        BufWriter::new(File::create(trace_path(dir, seed))?),
    )?;
    Ok(())
}

/// Mean and sample standard deviation; the deviation needs two values.
pub fn mean_std(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    Some((mean, std))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub target: f64,
    pub time_to_target: Option<f64>,
    /// Time of the last evaluation, shown for unmet targets.
    pub horizon: f64,
}

/// Per-seed results of one run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub strategy: StrategyKind,
    pub seeds: Vec<SeedSummary>,
}

impl RunSummary {
    pub fn final_accuracy(&self) -> Option<(f64, Option<f64>)> {
        mean_std(
            &self
                .seeds
                .iter()
                .map(|s| s.final_accuracy)
                .collect::<Vec<_>>(),
        )
    }

    pub fn best_accuracy(&self) -> Option<(f64, Option<f64>)> {
        mean_std(
            &self
                .seeds
                .iter()
                .map(|s| s.best_accuracy)
                .collect::<Vec<_>>(),
        )
    }

    /// Mean and deviation of time-to-target, `None` if any seed missed it.
    pub fn time_to_target(&self) -> Option<(f64, Option<f64>)> {
        let times: Option<Vec<f64>> = self.seeds.iter().map(|s| s.time_to_target).collect();
        mean_std(&times?)
    }
}

/// How the accuracy target of a summary is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// A fraction of the best accuracy the reference strategy reached under
    /// the same seed.
    Relative {
        fraction: f64,
        reference: StrategyKind,
    },
    Absolute(f64),
}

/// Seeds present in a run directory, ascending.
pub fn seeds_in(dir: &Path) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(seed) = name
            .strip_prefix("metrics_seed")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse().ok())
        {
            seeds.push(seed);
        }
    }
    seeds.sort_unstable();
    Ok(seeds)
}

pub fn load_metrics(dir: &Path, seed: u64) -> Result<Vec<MetricsRecord>> {
    read_metrics(File::open(metrics_path(dir, seed))?)
}

fn best_of(records: &[MetricsRecord]) -> f64 {
    records.iter().map(|r| r.test_accuracy).fold(0.0, f64::max)
}

/// Summarizes every run directory under `runs`.
pub fn summarize(runs: &Path, target: Target) -> Result<Vec<RunSummary>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(runs)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    dirs.retain(|d| d.join("config.toml").is_file());
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Precondition(format!(
            "no run directories under {}",
            runs.display()
        )));
    }
    let mut loaded = Vec::new();
    for dir in dirs {
        let cfg = ExperimentConfig::load(&dir.join("config.toml"))?;
        let mut per_seed = Vec::new();
        for seed in seeds_in(&dir)? {
            per_seed.push((seed, load_metrics(&dir, seed)?));
        }
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        loaded.push((label, cfg.strategy.kind, per_seed));
    }

    let reference = match target {
        Target::Relative { reference, .. } => {
            let mut refs = loaded.iter().filter(|(_, k, _)| *k == reference);
            let found = refs.next().ok_or_else(|| {
                Error::Precondition(format!(
                    "no {} run to take the target from",
                    reference.name()
                ))
            })?;
            if refs.next().is_some() {
                return Err(Error::Precondition(format!(
                    "more than one {} run; pass an absolute target",
                    reference.name()
                )));
            }
            Some(found.2.clone())
        }
        Target::Absolute(_) => None,
    };

    let mut out = Vec::new();
    for (label, strategy, per_seed) in loaded {
        let mut seeds = Vec::new();
        for (seed, records) in per_seed {
            if records.is_empty() {
                return Err(Error::Format(format!(
                    "{label}: seed {seed} has no records"
                )));
            }
            let goal = match target {
                Target::Absolute(t) => t,
                Target::Relative { fraction, .. } => {
                    let reference = reference.as_ref().expect("set for relative targets");
                    let (_, r) = reference.iter().find(|(s, _)| *s == seed).ok_or_else(|| {
                        Error::Precondition(format!("reference run lacks seed {seed}"))
                    })?;
                    fraction * best_of(r)
                }
            };
            let last = records.last().expect("non-empty");
            seeds.push(SeedSummary {
                seed,
                final_accuracy: last.test_accuracy,
                best_accuracy: best_of(&records),
                target: goal,
                time_to_target: time_to_target(&records, goal),
                horizon: last.sim_time,
            });
        }
        out.push(RunSummary {
            label,
            strategy,
            seeds,
        });
    }
    Ok(out)
}

fn pm(v: Option<(f64, Option<f64>)>, digits: usize) -> String {
    match v {
        None => "-".into(),
        Some((m, None)) => format!("{m:.digits$}"),
        Some((m, Some(s))) => format!("{m:.digits$} ± {s:.digits$}"),
    }
}

/// Plain-text table of summaries.
pub fn render_summary(summaries: &[RunSummary]) -> String {
    let mut s = format!(
        "{:<16} {:<10} {:>18} {:>18} {:>22}\n",
        "run", "strategy", "final acc", "best acc", "time to target"
    );
    for r in summaries {
        let ttt = match r.time_to_target() {
            Some(v) => pm(Some(v), 1),
            None => {
                let horizon = r.seeds.iter().map(|s| s.horizon).fold(0.0, f64::max);
                format_time_to_target(None, horizon)
            }
        };
        s.push_str(&format!(
            "{:<16} {:<10} {:>18} {:>18} {:>22}\n",
            r.label,
            r.strategy.name(),
            pm(r.final_accuracy(), 4),
            pm(r.best_accuracy(), 4),
            ttt
        ));
        for seed in &r.seeds {
            s.push_str(&format!(
                "  seed {:<8} final {:.4}  best {:.4}  target {:.4}  reached {}\n",
                seed.seed,
                seed.final_accuracy,
                seed.best_accuracy,
                seed.target,
                format_time_to_target(seed.time_to_target, seed.horizon)
            ));
        }
    }
    s
}

/// Plain-text staleness histogram with quantiles.
pub fn render_histogram(h: &StalenessHistogram) -> String {
    let peak = h.bins.values().copied().max().unwrap_or(1);
    let mut s = format!(
        "arrivals {}  mean {:.3}  p50 {}  p90 {}  p99 {}\n",
        h.count, h.mean, h.p50, h.p90, h.p99
    );
    for (tau, n) in &h.bins {
        let bar = "#".repeat((n * 50).div_ceil(peak));
        s.push_str(&format!("{tau:>5} {n:>8} {bar}\n"));
    }
    s
}
