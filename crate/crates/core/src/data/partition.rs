// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PartitionMode {
    /// Every sample goes to exactly one client; shard sizes differ by at most one.
    Disjoint,
    /// Each client draws `per_client` samples with replacement from the
    /// class-conditional pools. Shards may overlap.
    FixedSize { per_client: usize },
}

/// Which dataset rows each client owns.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientPartition {
    clients: Vec<Vec<usize>>,
    /// Dirichlet class proportions drawn for each client.
    priors: Vec<Vec<f64>>,
}

impl ClientPartition {
    /// Wraps explicit shards; priors are left empty.
    pub fn from_indices(clients: Vec<Vec<usize>>, _n: usize) -> Self {
        let priors = vec![Vec::new(); clients.len()];
        Self { clients, priors }
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn indices(&self, client: usize) -> Result<&[usize]> {
        self.clients
            .get(client)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownClient(client))
    }

    pub fn priors(&self, client: usize) -> Result<&[f64]> {
        self.priors
            .get(client)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownClient(client))
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clients.iter().map(Vec::len).collect()
    }
}

/// Per-client class counts `n_{j,c}` and their normalized proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub counts: Vec<Vec<usize>>,
    pub proportions: Vec<Vec<f64>>,
}

impl LabelDistribution {
    pub fn from_partition(ds: &Dataset, partition: &ClientPartition) -> Self {
        let counts: Vec<Vec<usize>> = partition
            .clients
            .iter()
            .map(|idx| {
                let mut c = vec![0; ds.classes];
                for &i in idx {
                    c[ds.labels[i]] += 1;
                }
                c
            })
            .collect();
        let proportions = counts.iter().map(|c| normalize_counts(c)).collect();
        Self {
            counts,
            proportions,
        }
    }

    pub fn client(&self, client: usize) -> Result<&[usize]> {
        self.counts
            .get(client)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownClient(client))
    }
}

pub(crate) fn normalize_counts(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![1.0 / counts.len() as f64; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

fn dirichlet<R: Rng + ?Sized>(alpha: f64, classes: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha checked positive");
    let draws: Vec<f64> = (0..classes).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // every gamma draw underflowed; tiny alpha puts all mass on one class
        let mut p = vec![0.0; classes];
        p[rng.random_range(0..classes)] = 1.0;
        p
    }
}

/// Samples a class from `weights` restricted to `allowed`; uniform over the
/// allowed classes when the restricted mass vanishes.
fn draw_class<R: Rng + ?Sized>(
    weights: &[f64],
    allowed: impl Fn(usize) -> bool,
    rng: &mut R,
) -> Option<usize> {
    let mass: f64 = (0..weights.len())
        .filter(|&c| allowed(c))
        .map(|c| weights[c])
        .sum();
    let open: Vec<usize> = (0..weights.len()).filter(|&c| allowed(c)).collect();
    if open.is_empty() {
        return None;
    }
    if mass <= 0.0 {
        return Some(open[rng.random_range(0..open.len())]);
    }
    let mut u = rng.random::<f64>() * mass;
    for &c in &open {
        if u < weights[c] {
            return Some(c);
        }
        u -= weights[c];
    }
    open.iter().rev().copied().find(|&c| weights[c] > 0.0)
}

/// Splits `ds` across `clients` with per-client class proportions drawn from
/// `Dir(alpha * 1_C)`.
pub fn dirichlet_partition(
    ds: &Dataset,
    clients: usize,
    alpha: f64,
    mode: PartitionMode,
    seed: u64,
) -> Result<(ClientPartition, LabelDistribution)> {
    if clients == 0 {
        return Err(Error::Config("partition needs at least one client".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "dirichlet alpha must be positive, got {alpha}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let priors: Vec<Vec<f64>> = (0..clients)
        .map(|_| dirichlet(alpha, ds.classes, &mut rng))
        .collect();
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        pools[y].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); clients];
    match mode {
        PartitionMode::Disjoint => {
            if ds.len() < clients {
                return Err(Error::Config(format!(
                    "{} samples cannot cover {clients} disjoint clients",
                    ds.len()
                )));
            }
            let base = ds.len() / clients;
            let extra = ds.len() % clients;
            let mut quota: Vec<usize> = (0..clients)
                .map(|j| base + usize::from(j < extra))
                .collect();
            let mut open: Vec<usize> = (0..clients).collect();
            while !open.is_empty() {
                let slot = rng.random_range(0..open.len());
                let j = open[slot];
                let c = draw_class(&priors[j], |c| !pools[c].is_empty(), &mut rng)
                    .expect("quotas sum to the number of samples");
                shards[j].push(pools[c].pop().expect("class pool is non-empty"));
                quota[j] -= 1;
                if quota[j] == 0 {
                    open.swap_remove(slot);
                }
            }
        }
        PartitionMode::FixedSize { per_client } => {
            if per_client == 0 {
                return Err(Error::Config("per_client must be positive".into()));
            }
            for (j, shard) in shards.iter_mut().enumerate() {
                for _ in 0..per_client {
                    let c = draw_class(&priors[j], |c| !pools[c].is_empty(), &mut rng)
                        .ok_or_else(|| Error::Config("dataset is empty".into()))?;
                    shard.push(pools[c][rng.random_range(0..pools[c].len())]);
                }
            }
        }
    }
    fill_empty_clients(&mut shards);
    for shard in &mut shards {
        shard.sort_unstable();
    }
    let partition = ClientPartition {
        clients: shards,
        priors,
    };
    let labels = LabelDistribution::from_partition(ds, &partition);
    Ok((partition, labels))
}

/// Shuffles `ds` and deals it round-robin, so every client sees the global
/// label mix up to sampling noise.
pub fn iid_partition(
    ds: &Dataset,
    clients: usize,
    seed: u64,
) -> Result<(ClientPartition, LabelDistribution)> {
    if clients == 0 || ds.len() < clients {
        return Err(Error::Config(format!(
            "{} samples cannot cover {clients} clients",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for (k, i) in order.into_iter().enumerate() {
        shards[k % clients].push(i);
    }
    for shard in &mut shards {
        shard.sort_unstable();
    }
    let partition = ClientPartition::from_indices(shards, ds.len());
    let labels = LabelDistribution::from_partition(ds, &partition);
    Ok((partition, labels))
}

/// Moves one sample from the largest shard into each empty shard.
fn fill_empty_clients(shards: &mut [Vec<usize>]) {
    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let (largest, size) = shards
            .iter()
            .enumerate()
            .map(|(j, s)| (j, s.len()))
            .max_by_key(|&(j, len)| (len, std::cmp::Reverse(j)))
            .expect("at least one shard");
        if size < 2 {
            return;
        }
        let moved = shards[largest].pop().expect("largest shard is non-empty");
        shards[empty].push(moved);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;

    fn mean_max_share(labels: &LabelDistribution) -> f64 {
        let maxes: Vec<f64> = labels
            .proportions
            .iter()
            .map(|p| p.iter().copied().fold(0.0, f64::max))
            .collect();
        maxes.iter().sum::<f64>() / maxes.len() as f64
    }

    #[test]
    fn iid_shards_cover_the_dataset_once() {
        let ds = make_blobs(3, 4, 3, 42, 1.0).unwrap();
        let (p, labels) = iid_partition(&ds, 5, 9).unwrap();
        let mut all: Vec<usize> = (0..5)
            .flat_map(|c| p.indices(c).unwrap().to_vec())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..42).collect::<Vec<_>>());
        assert!(p.sizes().iter().all(|&n| n == 8 || n == 9));
        let total: usize = (0..5)
            .map(|c| labels.client(c).unwrap().iter().sum::<usize>())
            .sum();
        assert_eq!(total, 42);
    }

    #[test]
    fn single_client_owns_everything() {
        let ds = make_blobs(2, 4, 3, 103, 1.0).unwrap();
        let (part, labels) = dirichlet_partition(&ds, 1, 0.5, PartitionMode::Disjoint, 1).unwrap();
        assert_eq!(
            part.indices(0).unwrap(),
            (0..103).collect::<Vec<_>>().as_slice()
        );
        assert_eq!(labels.counts[0], ds.histogram());
    }

    #[test]
    fn huge_alpha_gives_near_uniform_priors() {
        let ds = make_blobs(2, 10, 3, 1000, 1.0).unwrap();
        let (part, _) = dirichlet_partition(&ds, 10, 1e6, PartitionMode::Disjoint, 4).unwrap();
        for j in 0..10 {
            for &p in part.priors(j).unwrap() {
                assert!((p - 0.1).abs() < 0.005, "prior {p}");
            }
        }
    }

    #[test]
    fn small_alpha_is_more_skewed() {
        let ds = make_blobs(2, 10, 3, 2000, 1.0).unwrap();
        let (_, skewed) = dirichlet_partition(&ds, 40, 0.5, PartitionMode::Disjoint, 7).unwrap();
        let (_, flat) = dirichlet_partition(&ds, 40, 1e6, PartitionMode::Disjoint, 7).unwrap();
        assert!(mean_max_share(&skewed) > mean_max_share(&flat));
    }

    #[test]
    fn disjoint_shards_cover_dataset_once() {
        let ds = make_blobs(3, 5, 2, 257, 1.0).unwrap();
        let (part, labels) = dirichlet_partition(&ds, 12, 0.3, PartitionMode::Disjoint, 3).unwrap();
        let mut all: Vec<usize> = (0..12)
            .flat_map(|j| part.indices(j).unwrap().to_vec())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..257).collect::<Vec<_>>());
        for j in 0..12 {
            assert!(!part.indices(j).unwrap().is_empty());
            assert_eq!(
                labels.counts[j].iter().sum::<usize>(),
                part.indices(j).unwrap().len()
            );
            let total: f64 = labels.proportions[j].iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_size_mode_gives_equal_shards() {
        let ds = make_blobs(3, 5, 2, 100, 1.0).unwrap();
        let (part, labels) =
            dirichlet_partition(&ds, 7, 0.5, PartitionMode::FixedSize { per_client: 35 }, 3)
                .unwrap();
        assert_eq!(part.sizes(), vec![35; 7]);
        assert!(labels.counts.iter().all(|c| c.iter().sum::<usize>() == 35));
    }

    #[test]
    fn empty_shards_borrow_from_largest() {
        let mut shards = vec![vec![1, 2, 3], vec![], vec![4]];
        fill_empty_clients(&mut shards);
        assert_eq!(shards, vec![vec![1, 2], vec![3], vec![4]]);
    }
}
