// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::VecDeque;

use crate::data::LabelDistribution;
use crate::error::{Error, Result};
use crate::nn::{FeatureStats, ParamVector};

/// A received client model kept as a distillation teacher.
#[derive(Debug, Clone)]
pub struct Teacher {
    pub params: ParamVector,
    pub stats: FeatureStats,
    /// The client's class counts `n_{j,c}`.
    pub label_counts: Vec<usize>,
    /// Arrival sequence number at the server.
    pub arrival: u64,
}

impl Teacher {
    /// Share of this client's data carrying `class`; uniform if it has no data.
    pub fn label_share(&self, class: usize) -> f64 {
        let total: usize = self.label_counts.iter().sum();
        if total == 0 {
            return 1.0 / self.label_counts.len().max(1) as f64;
        }
        self.label_counts.get(class).copied().unwrap_or(0) as f64 / total as f64
    }
}

/// Rolling window of the most recent teachers, oldest evicted first.
#[derive(Debug, Clone)]
pub struct KdBuffer {
    entries: VecDeque<Teacher>,
    capacity: usize,
    spec_hash: u64,
}

impl KdBuffer {
    pub const DEFAULT_CAPACITY: usize = 8;

    pub fn new(capacity: usize, spec_hash: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("KD buffer capacity must be positive".into()));
        }
        Ok(Self {
            entries: VecDeque::with_capacity(capacity + 1),
            capacity,
            spec_hash,
        })
    }

    pub fn push(&mut self, teacher: Teacher) -> Result<()> {
        if teacher.params.spec_hash() != self.spec_hash {
            return Err(Error::Binding {
                left: self.spec_hash,
                right: teacher.params.spec_hash(),
            });
        }
        self.entries.push_back(teacher);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Teacher> {
        self.entries.iter()
    }

    /// Arrival numbers, oldest first.
    pub fn arrivals(&self) -> Vec<u64> {
        self.entries.iter().map(|t| t.arrival).collect()
    }

    /// `w_j = n_{j,c} / sum_k n_{k,c}` over buffered teachers, uniform when no
    /// buffered client holds `class`.
    pub fn teacher_weights(&self, class: usize) -> Result<Vec<f64>> {
        if self.entries.is_empty() {
            return Err(Error::Precondition("KD buffer is empty".into()));
        }
        let counts: Vec<f64> = self
            .entries
            .iter()
            .map(|t| t.label_counts.get(class).copied().unwrap_or(0) as f64)
            .collect();
        let total: f64 = counts.iter().sum();
        if total == 0.0 {
            let u = 1.0 / counts.len() as f64;
            return Ok(vec![u; counts.len()]);
        }
        Ok(counts.into_iter().map(|c| c / total).collect())
    }
}

/// Builds a buffer entry from a client's shard statistics.
pub fn teacher_from(
    params: ParamVector,
    stats: FeatureStats,
    labels: &LabelDistribution,
    client: usize,
    arrival: u64,
) -> Result<Teacher> {
    Ok(Teacher {
        params,
        stats,
        label_counts: labels.client(client)?.to_vec(),
        arrival,
    })
}
