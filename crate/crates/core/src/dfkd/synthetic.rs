// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::VecDeque;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Capacity-bounded ring of pseudo-samples with their target labels.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    samples: VecDeque<(Vec<f64>, usize)>,
    capacity: usize,
    dim: usize,
    classes: usize,
}

impl SyntheticDataset {
    pub const DEFAULT_CAPACITY: usize = 512;

    pub fn new(capacity: usize, dim: usize, classes: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config(
                "synthetic dataset capacity must be positive".into(),
            ));
        }
        Ok(Self {
            samples: VecDeque::with_capacity(capacity),
            capacity,
            dim,
            classes,
        })
    }

    /// Appends every row of `inputs`, evicting the oldest samples past capacity.
    pub fn extend(&mut self, inputs: &Tensor, labels: &[usize]) -> Result<()> {
        if inputs.cols() != self.dim || inputs.rows() != labels.len() {
            return Err(Error::dims(
                format!("[{}, {}]", labels.len(), self.dim),
                format!("{:?}", inputs.shape()),
            ));
        }
        for (row, &y) in inputs.row_iter().zip(labels) {
            if y >= self.classes {
                return Err(Error::dims(format!("label < {}", self.classes), y));
            }
            self.samples.push_back((row.to_vec(), y));
            if self.samples.len() > self.capacity {
                self.samples.pop_front();
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.samples.iter().map(|(_, y)| *y)
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        let (x, y) = &self.samples[i];
        (x, *y)
    }

    /// Snapshot as a regular dataset, oldest sample first.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let mut values = Vec::with_capacity(self.samples.len() * self.dim);
        let mut labels = Vec::with_capacity(self.samples.len());
        for (x, y) in &self.samples {
            values.extend_from_slice(x);
            labels.push(*y);
        }
        Dataset::new(
            Tensor::matrix(labels.len(), self.dim, values)?,
            labels,
            self.classes,
        )
    }

    /// Wraps a real dataset, for distilling on public data instead of samples.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let mut out = Self::new(ds.len().max(1), ds.dim(), ds.classes)?;
        out.extend(&ds.inputs, &ds.labels)?;
        Ok(out)
    }
}
