// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{argmax, cross_entropy, forward_trace, ModelSpec, ParamVector};

/// One evaluation point of a run; a row of `metrics_seed<N>.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub sim_time: f64,
    pub server_updates: u64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub best_so_far: f64,
    /// Staleness of the most recent arrival, empty before the first.
    pub last_staleness: Option<u64>,
}

/// Accuracy and mean cross-entropy over the whole test set. Argmax ties go
/// to the lower class index.
pub fn evaluate(spec: &ModelSpec, params: &ParamVector, test: &Dataset) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::Precondition("test set is empty".into()));
    }
    let logits = forward_trace(spec, params, &test.inputs)?.output_tensor();
    let correct = logits
        .row_iter()
        .zip(&test.labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    let (loss, _) = cross_entropy(&logits, &test.labels)?;
    Ok((correct as f64 / test.len() as f64, loss))
}

/// Running maximum.
pub fn best_so_far(series: &[f64]) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    series
        .iter()
        .map(|&v| {
            best = best.max(v);
            best
        })
        .collect()
}

/// First `sim_time` whose best-so-far accuracy reaches `target`, or `None`
/// when the run never gets there.
pub fn time_to_target(records: &[MetricsRecord], target: f64) -> Option<f64> {
    records
        .iter()
        .find(|r| r.best_so_far >= target)
        .map(|r| r.sim_time)
}

/// Renders a time-to-target the way result tables do, `>horizon` when unmet.
pub fn format_time_to_target(time: Option<f64>, horizon: f64) -> String {
    match time {
        Some(t) => format!("{t:.1}"),
        None => format!(">{horizon}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StalenessHistogram {
    /// Staleness value to number of arrivals.
    pub bins: BTreeMap<u64, usize>,
    pub count: usize,
    pub mean: f64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
}

/// Nearest-rank quantile of sorted values: the `ceil(q * n)`-th smallest.
pub fn nearest_rank(sorted: &[u64], q: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

pub fn staleness_histogram(staleness: &[u64]) -> Result<StalenessHistogram> {
    if staleness.is_empty() {
        return Err(Error::Precondition("no arrivals to summarize".into()));
    }
    let mut sorted = staleness.to_vec();
    sorted.sort_unstable();
    let mut bins = BTreeMap::new();
    for &s in &sorted {
        *bins.entry(s).or_insert(0) += 1;
    }
    let q = |p| nearest_rank(&sorted, p).expect("non-empty");
    Ok(StalenessHistogram {
        bins,
        count: sorted.len(),
        mean: sorted.iter().map(|&s| s as f64).sum::<f64>() / sorted.len() as f64,
        p50: q(0.5),
        p90: q(0.9),
        p99: q(0.99),
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_metrics<W: Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}
