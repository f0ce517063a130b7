// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample_weighted;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::{KdBuffer, SyntheticDataset, Teacher};
use crate::error::{Error, Result};
use crate::nn::{forward_trace, gradient, AdamState, Loss, ModelSpec, ParamVector, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub steps: usize,
    pub lr: f64,
    /// Samples drawn per teacher per step.
    pub batch: usize,
    pub temperature: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            lr: 0.003,
            batch: 32,
            temperature: 1.0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite())
            || !(self.temperature > 0.0 && self.temperature.is_finite())
            || self.batch == 0
        {
            return Err(Error::Config(
                "distillation needs lr >= 0, temperature > 0 and batch > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Picks `batch` indices of `data`, each sample weighted by the teacher's
/// share of its label. Without replacement when enough samples carry
/// positive weight, with replacement otherwise. Falls back to uniform
/// sampling when the teacher's labels and the data's labels are disjoint.
pub fn label_weighted_batch<R: Rng + ?Sized>(
    data: &SyntheticDataset,
    teacher: &Teacher,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if data.is_empty() {
        return Err(Error::Precondition("distillation dataset is empty".into()));
    }
    let weights: Vec<f64> = data.labels().map(|y| teacher.label_share(y)).collect();
    let eligible: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    if eligible.is_empty() {
        log::debug!(
            "teacher {} shares no labels with the distillation set",
            teacher.arrival
        );
        return Ok((0..batch)
            .map(|_| rng.random_range(0..data.len()))
            .collect());
    }
    if eligible.len() >= batch {
        let picked = sample_weighted(rng, eligible.len(), |i| weights[eligible[i]], batch)
            .map_err(|e| Error::Precondition(e.to_string()))?;
        return Ok(picked.into_iter().map(|i| eligible[i]).collect());
    }
    let dist = WeightedIndex::new(eligible.iter().map(|&i| weights[i]))
        .map_err(|e| Error::Precondition(e.to_string()))?;
    Ok((0..batch).map(|_| eligible[dist.sample(rng)]).collect())
}

fn gather(data: &SyntheticDataset, picks: &[usize]) -> Result<Tensor> {
    let rows: Vec<&[f64]> = picks.iter().map(|&i| data.sample(i).0).collect();
    Tensor::from_rows(&rows)
}

/// Multi-teacher distillation into a copy of `student_init`. Each step
/// averages the KL gradients of every buffered teacher on its own
/// label-weighted batch and takes one Adam step. Returns
/// `student - student_init`.
pub fn distill<R: Rng + ?Sized>(
    spec: &ModelSpec,
    student_init: &ParamVector,
    buffer: &KdBuffer,
    data: &SyntheticDataset,
    cfg: &DistillConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(Error::Precondition(
            "distillation needs at least one teacher".into(),
        ));
    }
    let mut student = student_init.clone();
    let mut adam = AdamState::new(student.len());
    let share = 1.0 / buffer.len() as f64;
    for _ in 0..cfg.steps {
        let mut total = student.zeros_like();
        for teacher in buffer.iter() {
            let picks = label_weighted_batch(data, teacher, cfg.batch, rng)?;
            let x = gather(data, &picks)?;
            let teacher_logits = forward_trace(spec, &teacher.params, &x)?.output_tensor();
            let (_, g) = gradient(
                spec,
                &student,
                &x,
                &Loss::Distill {
                    teacher_logits: &teacher_logits,
                    temperature: cfg.temperature,
                },
            )?;
            total.axpy(share, &g)?;
        }
        adam.update(student.values_mut(), total.values(), cfg.lr)?;
    }
    student.sub(student_init)
}
