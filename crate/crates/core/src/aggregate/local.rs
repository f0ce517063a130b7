// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_batch, ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::nn::{
    backward, cross_entropy, forward_trace, AdamState, FeatureStats, ModelSpec, ParamVector,
};

/// Client and server optimization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub client_lr: f64,
    pub server_lr: f64,
    /// Local Adam steps per client job.
    pub local_steps: usize,
    pub batch_size: usize,
    /// Jobs in flight at once (asynchronous) or clients per round (synchronous).
    pub concurrency: usize,
    /// Stop after this many server updates; 0 means no limit.
    pub max_server_updates: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            client_lr: 1e-3,
            server_lr: 0.1,
            local_steps: 25,
            batch_size: 32,
            concurrency: 10,
            max_server_updates: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.client_lr >= 0.0 && self.client_lr.is_finite())
            || !(self.server_lr >= 0.0 && self.server_lr.is_finite())
        {
            return Err(Error::Config(
                "learning rates must be finite and non-negative".into(),
            ));
        }
        if self.batch_size == 0 || self.concurrency == 0 {
            return Err(Error::Config(
                "batch_size and concurrency must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one client's local training.
#[derive(Debug, Clone)]
pub struct LocalResult {
    pub trained: ParamVector,
    /// `trained - start`
    pub delta: ParamVector,
    /// Running pre-activation statistics gathered during training.
    pub stats: FeatureStats,
    /// Minibatch loss before each step.
    pub losses: Vec<f64>,
}

/// `steps` Adam steps of minibatch cross-entropy on one client's shard,
/// starting from `start`. Feature statistics start fresh and follow the
/// training forward passes.
#[allow(clippy::too_many_arguments)]
pub fn local_train<R: Rng + ?Sized>(
    spec: &ModelSpec,
    start: &ParamVector,
    data: &Dataset,
    partition: &ClientPartition,
    client: usize,
    steps: usize,
    lr: f64,
    batch: usize,
    rng: &mut R,
) -> Result<LocalResult> {
    let mut params = start.clone();
    let mut stats = FeatureStats::new(spec);
    let mut adam = AdamState::new(params.len());
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (x, y) = sample_batch(data, partition, client, batch, rng)?;
        let trace =
            forward_trace(spec, &params, &x).map_err(|_| Error::TrainingDivergence { client })?;
        stats.absorb(&trace.moments(spec))?;
        let (loss, d_logits) = cross_entropy(&trace.output_tensor(), &y)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDivergence { client });
        }
        losses.push(loss);
        let grads = backward(spec, &params, &trace, &d_logits, &[])
            .map_err(|_| Error::TrainingDivergence { client })?;
        adam.update(params.values_mut(), grads.params.values(), lr)
            .map_err(|_| Error::TrainingDivergence { client })?;
    }
    let delta = params.sub(start)?;
    Ok(LocalResult {
        trained: params,
        delta,
        stats,
        losses,
    })
}
