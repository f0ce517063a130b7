// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::KdBuffer;
use crate::error::{Error, Result};
use crate::nn::{
    argmax, backward, forward_trace, interpolate, log_softmax, Activation, AdamState, LayerSpec,
    ModelSpec, ParamVector, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    /// Outputs are `output_scale * tanh(.)`.
    pub output_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden: 64,
            output_scale: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    /// Joint optimization steps on `(z, phi')`.
    pub steps: usize,
    pub lr: f64,
    /// Pseudo-samples per synthesis run.
    pub batch: usize,
    pub alpha_target: f64,
    pub alpha_feature: f64,
    pub alpha_adv: f64,
    /// Weight kept on the previous generator in the meta-update.
    pub meta_lambda: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            steps: 2,
            lr: 0.01,
            batch: 64,
            alpha_target: 1.0,
            alpha_feature: 0.003,
            alpha_adv: 0.1,
            meta_lambda: 0.5,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.alpha_target, self.alpha_feature, self.alpha_adv];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(
                "synthesis loss weights must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.meta_lambda) {
            return Err(Error::Config("meta_lambda must lie in [0, 1]".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || self.batch == 0 {
            return Err(Error::Config(
                "synthesis lr must be >= 0 and batch > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Latent-to-input generator, persistent over a whole run.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: ModelSpec,
    pub params: ParamVector,
    output_scale: f64,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        cfg: &GeneratorConfig,
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.latent_dim == 0
            || cfg.hidden == 0
            || !(cfg.output_scale.is_finite() && cfg.output_scale > 0.0)
        {
            return Err(Error::Config(
                "generator dimensions and scale must be positive".into(),
            ));
        }
        let spec = ModelSpec::new(vec![
            LayerSpec {
                inputs: cfg.latent_dim,
                outputs: cfg.hidden,
                activation: Activation::Relu,
                track_stats: false,
            },
            LayerSpec {
                inputs: cfg.hidden,
                outputs: output_dim,
                activation: Activation::Tanh,
                track_stats: false,
            },
        ])?;
        let params = spec.init_params(rng);
        Ok(Self {
            spec,
            params,
            output_scale: cfg.output_scale,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn generate(&self, params: &ParamVector, z: &Tensor) -> Result<Tensor> {
        let trace = forward_trace(&self.spec, params, z)?;
        Ok(self.scaled(&trace))
    }

    fn scaled(&self, trace: &crate::nn::Trace) -> Tensor {
        let mut out = trace.output_tensor();
        out.values_mut()
            .iter_mut()
            .for_each(|v| *v *= self.output_scale);
        out
    }
}

/// Components of the synthesis objective, each already averaged.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SynthLoss {
    pub total: f64,
    pub target: f64,
    pub feature: f64,
    pub adversarial: f64,
}

/// Synthesis objective on a generated batch and its gradient w.r.t. the batch.
///
/// For sample `k` with target `y_k`, each buffered teacher `j` contributes
/// with weight `w_j(y_k)`:
///
/// * target: cross-entropy of the teacher's logits against `y_k`;
/// * adversarial: `-KL(teacher || student)` where teacher and student agree on
///   the argmax, zero elsewhere;
/// * feature: squared distance between the teacher's batch pre-activation
///   moments and its running statistics, weighted by the teacher's mean
///   weight over the batch.
///
/// The student is treated as a constant.
pub fn synth_loss_grad(
    spec: &ModelSpec,
    generated: &Tensor,
    targets: &[usize],
    buffer: &KdBuffer,
    student: &ParamVector,
    cfg: &SynthesisConfig,
) -> Result<(SynthLoss, Vec<f64>)> {
    if buffer.is_empty() {
        return Err(Error::Precondition(
            "synthesis needs at least one teacher".into(),
        ));
    }
    let m = generated.rows();
    if targets.len() != m || generated.cols() != spec.input_dim() {
        return Err(Error::dims(
            format!("[{}, {}]", targets.len(), spec.input_dim()),
            format!("{:?}", generated.shape()),
        ));
    }
    let classes = spec.output_dim();
    if let Some(&bad) = targets.iter().find(|&&y| y >= classes) {
        return Err(Error::dims(format!("label < {classes}"), bad));
    }
    let inv_m = 1.0 / m as f64;

    let mut class_weights: Vec<Option<Vec<f64>>> = vec![None; classes];
    for &y in targets {
        if class_weights[y].is_none() {
            class_weights[y] = Some(buffer.teacher_weights(y)?);
        }
    }
    let weight = |k: usize, j: usize| class_weights[targets[k]].as_ref().expect("filled above")[j];

    let student_out = if cfg.alpha_adv > 0.0 {
        Some(forward_trace(spec, student, generated)?.output_tensor())
    } else {
        None
    };

    let mut loss = SynthLoss::default();
    let mut d_input = vec![0.0; generated.values().len()];

    for (j, teacher) in buffer.iter().enumerate() {
        let trace = forward_trace(spec, &teacher.params, generated)?;
        let logits = trace.output_tensor();
        let mut d_logits = vec![0.0; logits.values().len()];

        for k in 0..m {
            let w = weight(k, j);
            if w == 0.0 {
                continue;
            }
            let t = logits.row(k);
            let d = &mut d_logits[k * classes..(k + 1) * classes];
            let logp = log_softmax(t, 1.0);
            let p: Vec<f64> = logp.iter().map(|lp| lp.exp()).collect();

            let y = targets[k];
            loss.target -= inv_m * w * logp[y];
            let scale = cfg.alpha_target * inv_m * w;
            for (c, dc) in d.iter_mut().enumerate() {
                let onehot = if c == y { 1.0 } else { 0.0 };
                *dc += scale * (p[c] - onehot);
            }

            if let Some(student_out) = &student_out {
                let s = student_out.row(k);
                if argmax(t) == argmax(s) {
                    let logq = log_softmax(s, 1.0);
                    let kl = p
                        .iter()
                        .zip(logp.iter().zip(&logq))
                        .map(|(pi, (a, b))| pi * (a - b))
                        .sum::<f64>()
                        .max(0.0);
                    loss.adversarial -= inv_m * w * kl;
                    // d KL / d t_c = p_c (log p_c - log q_c - KL)
                    let scale = -cfg.alpha_adv * inv_m * w;
                    for c in 0..classes {
                        d[c] += scale * p[c] * (logp[c] - logq[c] - kl);
                    }
                }
            }
        }

        let mut pre_grads = Vec::new();
        if cfg.alpha_feature > 0.0 && teacher.stats.updates > 0 {
            let omega = (0..m).map(|k| weight(k, j)).sum::<f64>() * inv_m;
            if omega > 0.0 {
                for (batch, running) in trace.moments(spec).iter().zip(&teacher.stats.layers) {
                    let width = batch.mean.len();
                    let dmu: Vec<f64> = batch
                        .mean
                        .iter()
                        .zip(&running.mean)
                        .map(|(a, b)| a - b)
                        .collect();
                    let dvar: Vec<f64> = batch
                        .var
                        .iter()
                        .zip(&running.var)
                        .map(|(a, b)| a - b)
                        .collect();
                    loss.feature += omega
                        * (dmu.iter().map(|v| v * v).sum::<f64>()
                            + dvar.iter().map(|v| v * v).sum::<f64>());
                    let scale = cfg.alpha_feature * omega * inv_m;
                    let pre = trace.pre_activation(batch.layer);
                    let mut g = vec![0.0; pre.len()];
                    for (grow, hrow) in g.chunks_exact_mut(width).zip(pre.chunks_exact(width)) {
                        for u in 0..width {
                            grow[u] =
                                scale * (2.0 * dmu[u] + 4.0 * dvar[u] * (hrow[u] - batch.mean[u]));
                        }
                    }
                    pre_grads.push((batch.layer, g));
                }
            }
        }

        let grads = backward(spec, &teacher.params, &trace, &d_logits, &pre_grads)?;
        for (acc, g) in d_input.iter_mut().zip(&grads.input) {
            *acc += g;
        }
    }

    loss.total = cfg.alpha_target * loss.target
        + cfg.alpha_feature * loss.feature
        + cfg.alpha_adv * loss.adversarial;
    if !loss.total.is_finite() {
        return Err(Error::SynthesisDivergence);
    }
    Ok((loss, d_input))
}

/// Value-only form of [`synth_loss_grad`].
pub fn synth_loss(
    spec: &ModelSpec,
    generated: &Tensor,
    targets: &[usize],
    buffer: &KdBuffer,
    student: &ParamVector,
    cfg: &SynthesisConfig,
) -> Result<SynthLoss> {
    synth_loss_grad(spec, generated, targets, buffer, student, cfg).map(|(l, _)| l)
}

/// `m` target labels cycling through the classes from `offset`, so per-class
/// counts differ by at most one.
pub fn balanced_targets(m: usize, classes: usize, offset: usize) -> Vec<usize> {
    (0..m).map(|k| (offset + k) % classes).collect()
}

#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    /// Generator output at the lowest-loss step.
    pub samples: Tensor,
    pub targets: Vec<usize>,
    /// Total loss at step 0 (initial) through `steps`.
    pub losses: Vec<f64>,
    pub best_step: usize,
    /// Generator parameters after the last step.
    pub final_params: ParamVector,
}

/// Jointly optimizes fresh latents and a copy of the generator against the
/// synthesis loss, keeping the lowest-loss batch.
pub fn synthesize<R: Rng + ?Sized>(
    generator: &Generator,
    spec: &ModelSpec,
    buffer: &KdBuffer,
    student: &ParamVector,
    cfg: &SynthesisConfig,
    label_offset: usize,
    rng: &mut R,
) -> Result<SynthesisOutcome> {
    cfg.validate()?;
    let m = cfg.batch;
    let latent = generator.latent_dim();
    let targets = balanced_targets(m, spec.output_dim(), label_offset);
    let z_len = m * latent;

    // z followed by phi', optimized with one shared Adam state
    let mut vars: Vec<f64> = (0..z_len).map(|_| StandardNormal.sample(rng)).collect();
    vars.extend_from_slice(generator.params.values());
    let mut adam = AdamState::new(vars.len());

    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let mut best: Option<(f64, usize, Tensor)> = None;
    let mut final_params = generator.params.clone();

    for step in 0..=cfg.steps {
        let z = Tensor::matrix(m, latent, vars[..z_len].to_vec())?;
        let phi = generator.params.with_values(vars[z_len..].to_vec())?;
        let trace =
            forward_trace(generator.spec(), &phi, &z).map_err(|_| Error::SynthesisDivergence)?;
        let samples = generator.scaled(&trace);
        let (loss, d_samples) = synth_loss_grad(spec, &samples, &targets, buffer, student, cfg)?;
        losses.push(loss.total);
        if best.as_ref().is_none_or(|(b, _, _)| loss.total < *b) {
            best = Some((loss.total, step, samples));
        }
        if step == cfg.steps {
            final_params = phi;
            break;
        }
        let d_out: Vec<f64> = d_samples
            .iter()
            .map(|g| g * generator.output_scale)
            .collect();
        let grads = backward(generator.spec(), &phi, &trace, &d_out, &[])
            .map_err(|_| Error::SynthesisDivergence)?;
        let mut joint = grads.input;
        joint.extend_from_slice(grads.params.values());
        adam.update(&mut vars, &joint, cfg.lr)
            .map_err(|_| Error::SynthesisDivergence)?;
    }
    let (_, best_step, samples) = best.expect("at least one step evaluated");
    Ok(SynthesisOutcome {
        samples,
        targets,
        losses,
        best_step,
        final_params,
    })
}

/// Reptile-style interpolation `phi <- (1 - lambda) * phi' + lambda * phi`.
pub fn meta_update(generator: &mut Generator, adapted: &ParamVector, lambda: f64) -> Result<()> {
    generator.params = interpolate(adapted, &generator.params, lambda)?;
    Ok(())
}
