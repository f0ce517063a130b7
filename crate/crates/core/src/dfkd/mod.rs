// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

//! Server-side distillation of stale updates.
//!
//! Every arrival runs four steps against state owned by [`KdRevive`]:
//! the client model joins a FIFO teacher buffer, a generator synthesizes
//! pseudo-samples the teachers agree on, the generator is pulled back toward
//! its previous parameters, and the current global model is distilled on the
//! accumulated samples. The resulting parameter difference feeds the hybrid
//! aggregation rule in [`crate::aggregate`].

mod buffer;
mod distill;
mod synthesis;
mod synthetic;

pub use buffer::{teacher_from, KdBuffer, Teacher};
pub use distill::{distill, label_weighted_batch, DistillConfig};
pub use synthesis::{
    balanced_targets, meta_update, synth_loss, synth_loss_grad, synthesize, Generator,
    GeneratorConfig, SynthLoss, SynthesisConfig, SynthesisOutcome,
};
pub use synthetic::SyntheticDataset;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{FeatureStats, ModelSpec, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DfkdConfig {
    pub buffer_size: usize,
    pub synthetic_capacity: usize,
    pub generator: GeneratorConfig,
    pub synthesis: SynthesisConfig,
    pub distill: DistillConfig,
}

impl Default for DfkdConfig {
    fn default() -> Self {
        Self {
            buffer_size: KdBuffer::DEFAULT_CAPACITY,
            synthetic_capacity: SyntheticDataset::DEFAULT_CAPACITY,
            generator: GeneratorConfig::default(),
            synthesis: SynthesisConfig::default(),
            distill: DistillConfig::default(),
        }
    }
}

impl DfkdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_size == 0 || self.synthetic_capacity == 0 {
            return Err(Error::Config(
                "KD buffer and synthetic capacity must be positive".into(),
            ));
        }
        self.synthesis.validate()?;
        self.distill.validate()
    }
}

/// Distillation state of one server: teachers, generator and sample store.
#[derive(Debug, Clone)]
pub struct KdRevive {
    spec: ModelSpec,
    cfg: DfkdConfig,
    buffer: KdBuffer,
    generator: Generator,
    synthetic: SyntheticDataset,
    /// Real data to distill on instead of synthesized samples.
    public: Option<SyntheticDataset>,
    arrivals: u64,
}

impl KdRevive {
    pub fn new<R: Rng + ?Sized>(spec: &ModelSpec, cfg: DfkdConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            spec: spec.clone(),
            buffer: KdBuffer::new(cfg.buffer_size, spec.hash())?,
            generator: Generator::new(&cfg.generator, spec.input_dim(), rng)?,
            synthetic: SyntheticDataset::new(
                cfg.synthetic_capacity,
                spec.input_dim(),
                spec.output_dim(),
            )?,
            public: None,
            arrivals: 0,
            cfg,
        })
    }

    /// Skips synthesis and distills on `data` instead.
    pub fn with_public_data(mut self, data: &Dataset) -> Result<Self> {
        if data.dim() != self.spec.input_dim() || data.classes != self.spec.output_dim() {
            return Err(Error::dims(
                format!(
                    "{} inputs, {} classes",
                    self.spec.input_dim(),
                    self.spec.output_dim()
                ),
                format!("{} inputs, {} classes", data.dim(), data.classes),
            ));
        }
        self.public = Some(SyntheticDataset::from_dataset(data)?);
        Ok(self)
    }

    pub fn buffer(&self) -> &KdBuffer {
        &self.buffer
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn synthetic(&self) -> &SyntheticDataset {
        &self.synthetic
    }

    pub fn arrivals(&self) -> u64 {
        self.arrivals
    }

    pub fn config(&self) -> &DfkdConfig {
        &self.cfg
    }

    /// Processes one arrival and returns the distilled update for `current`.
    pub fn try_step<R: Rng + ?Sized>(
        &mut self,
        teacher: ParamVector,
        stats: FeatureStats,
        label_counts: Vec<usize>,
        current: &ParamVector,
        rng: &mut R,
    ) -> Result<ParamVector> {
        self.arrivals += 1;
        self.buffer.push(Teacher {
            params: teacher,
            stats,
            label_counts,
            arrival: self.arrivals,
        })?;
        let corpus = match &self.public {
            Some(public) => public,
            None => {
                let classes = self.spec.output_dim() as u64;
                let offset =
                    ((self.arrivals - 1) * self.cfg.synthesis.batch as u64 % classes) as usize;
                let outcome = synthesize(
                    &self.generator,
                    &self.spec,
                    &self.buffer,
                    current,
                    &self.cfg.synthesis,
                    offset,
                    rng,
                )?;
                self.synthetic.extend(&outcome.samples, &outcome.targets)?;
                meta_update(
                    &mut self.generator,
                    &outcome.final_params,
                    self.cfg.synthesis.meta_lambda,
                )?;
                &self.synthetic
            }
        };
        let delta = distill(
            &self.spec,
            current,
            &self.buffer,
            corpus,
            &self.cfg.distill,
            rng,
        )?;
        if !delta.is_finite() {
            return Err(Error::SynthesisDivergence);
        }
        Ok(delta)
    }

    /// [`Self::try_step`] that degrades to a zero update on failure.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        teacher: ParamVector,
        stats: FeatureStats,
        label_counts: Vec<usize>,
        current: &ParamVector,
        rng: &mut R,
    ) -> ParamVector {
        match self.try_step(teacher, stats, label_counts, current, rng) {
            Ok(delta) => delta,
            Err(e) => {
                log::warn!("arrival {}: distillation skipped: {e}", self.arrivals);
                current.zeros_like()
            }
        }
    }
}
