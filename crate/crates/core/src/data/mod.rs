// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

//! Synthetic classification tasks and their non-IID split across clients.

mod io;
mod partition;

pub use io::{read_dataset, write_dataset};
pub use partition::{
    dirichlet_partition, iid_partition, ClientPartition, LabelDistribution, PartitionMode,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Labelled inputs: `inputs` is `[n, d]`, `labels[i] < classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.rows() != labels.len() {
            return Err(Error::dims(labels.len(), format!("{:?}", inputs.shape())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::dims(format!("label < {classes}"), bad));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Gathers the given rows into a batch.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut values = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        (
            Tensor::matrix(indices.len(), d, values).expect("rows have width d"),
            labels,
        )
    }
}

/// Centre of class `c`: a signed unit axis, pushed outward on each wrap so
/// that every class gets a distinct centre for any `(classes, dim)`.
pub fn blob_center(class: usize, dim: usize) -> Vec<f64> {
    let axis = class % dim;
    let wrap = class / dim;
    let sign = if wrap.is_multiple_of(2) { 1.0 } else { -1.0 };
    let radius = 1.0 + (wrap / 2) as f64;
    let mut c = vec![0.0; dim];
    c[axis] = sign * radius;
    c
}

/// Isotropic Gaussian clusters, one per class, with balanced labels.
///
/// Centres do not depend on the seed, so a train and a test set drawn with
/// different seeds describe the same task.
pub fn make_blobs(seed: u64, classes: usize, dim: usize, n: usize, spread: f64) -> Result<Dataset> {
    if classes < 2 || dim < 2 || n < classes {
        return Err(Error::Config(format!(
            "blobs need classes >= 2, dim >= 2, n >= classes (got {classes}, {dim}, {n})"
        )));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!(
            "spread must be positive, got {spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let centers: Vec<Vec<f64>> = (0..classes).map(|c| blob_center(c, dim)).collect();
    let mut values = Vec::with_capacity(n * dim);
    for &y in &labels {
        for &m in &centers[y] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            values.push(m + spread * noise);
        }
    }
    Dataset::new(Tensor::matrix(n, dim, values)?, labels, classes)
}

/// Draws `batch` samples uniformly with replacement from one client's shard.
pub fn sample_batch<R: Rng + ?Sized>(
    ds: &Dataset,
    partition: &ClientPartition,
    client: usize,
    batch: usize,
    rng: &mut R,
) -> Result<(Tensor, Vec<usize>)> {
    let own = partition.indices(client)?;
    if own.is_empty() {
        return Err(Error::Precondition(format!(
            "client {client} has no samples"
        )));
    }
    let picks: Vec<usize> = (0..batch)
        .map(|_| own[rng.random_range(0..own.len())])
        .collect();
    Ok(ds.gather(&picks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a = make_blobs(11, 2, 2, 100, 0.5).unwrap();
        let b = make_blobs(11, 2, 2, 100, 0.5).unwrap();
        let bits = |d: &Dataset| {
            d.inputs
                .values()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.histogram(), vec![50, 50]);
    }

    #[test]
    fn tight_blobs_are_separable_by_nearest_centroid() {
        let ds = make_blobs(5, 10, 4, 400, 1e-6).unwrap();
        let centers: Vec<Vec<f64>> = (0..10).map(|c| blob_center(c, 4)).collect();
        for (x, &y) in ds.inputs.row_iter().zip(&ds.labels) {
            let nearest = (0..10)
                .min_by(|&a, &b| {
                    let da: f64 = x
                        .iter()
                        .zip(&centers[a])
                        .map(|(p, q)| (p - q).powi(2))
                        .sum();
                    let db: f64 = x
                        .iter()
                        .zip(&centers[b])
                        .map(|(p, q)| (p - q).powi(2))
                        .sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(nearest, y);
        }
    }

    #[test]
    fn degenerate_spread_is_rejected() {
        assert!(matches!(
            make_blobs(0, 3, 2, 10, 0.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_blobs(0, 1, 2, 10, 1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_sample_client_repeats_it() {
        let ds = make_blobs(1, 2, 2, 4, 1.0).unwrap();
        let part = ClientPartition::from_indices(vec![vec![2], vec![0, 1, 3]], ds.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, y) = sample_batch(&ds, &part, 0, 4, &mut rng).unwrap();
        for row in x.row_iter() {
            assert_eq!(row, ds.inputs.row(2));
        }
        assert_eq!(y, vec![ds.labels[2]; 4]);
    }

    #[test]
    fn batches_repeat_under_equal_rng_state() {
        let ds = make_blobs(1, 3, 2, 30, 1.0).unwrap();
        let part = ClientPartition::from_indices(vec![(0..30).collect()], 30);
        let rng = ChaCha8Rng::seed_from_u64(9);
        let a = sample_batch(&ds, &part, 0, 8, &mut rng.clone()).unwrap();
        let b = sample_batch(&ds, &part, 0, 8, &mut rng.clone()).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            sample_batch(&ds, &part, 3, 8, &mut rng.clone()),
            Err(Error::UnknownClient(3))
        ));
    }
}
