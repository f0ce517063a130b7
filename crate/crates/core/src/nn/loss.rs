// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use super::{backward, forward_trace, ModelSpec, ParamVector, Tensor};
use crate::error::{Error, Result};

/// Temperature softmax of one row, with max subtraction.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|&l| (l - max) / temperature).collect();
    let lse = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|s| s - lse).collect()
}

/// Lowest index among the maxima.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(Error::dims(
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

/// Mean cross-entropy against hard labels and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    if logits.rows() != labels.len() {
        return Err(Error::dims(logits.rows(), labels.len()));
    }
    let classes = logits.cols();
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.values().len());
    for (row, &y) in logits.row_iter().zip(labels) {
        if y >= classes {
            return Err(Error::dims(format!("label < {classes}"), y));
        }
        let logp = log_softmax(row, 1.0);
        loss -= logp[y];
        grad.extend(logp.iter().enumerate().map(|(c, lp)| {
            let target = if c == y { 1.0 } else { 0.0 };
            (lp.exp() - target) / n
        }));
    }
    Ok((loss / n, grad))
}

/// Per-row `KL(softmax(t/T) || softmax(s/T))`.
pub fn kl_rows(teacher: &Tensor, student: &Tensor, temperature: f64) -> Result<Vec<f64>> {
    same_shape(teacher, student)?;
    Ok(teacher
        .row_iter()
        .zip(student.row_iter())
        .map(|(t, s)| kl_row(t, s, temperature))
        .collect())
}

pub(crate) fn kl_row(teacher: &[f64], student: &[f64], temperature: f64) -> f64 {
    let lp = log_softmax(teacher, temperature);
    let lq = log_softmax(student, temperature);
    // Clamped at zero: rounding can leave a -1e-17 residue for equal rows.
    lp.iter()
        .zip(&lq)
        .map(|(a, b)| a.exp() * (a - b))
        .sum::<f64>()
        .max(0.0)
}

/// Batch mean of `KL(softmax(teacher/T) || softmax(student/T))`.
pub fn kl_divergence(teacher: &Tensor, student: &Tensor, temperature: f64) -> Result<f64> {
    let rows = kl_rows(teacher, student, temperature)?;
    Ok(rows.iter().sum::<f64>() / rows.len().max(1) as f64)
}

/// Batch-mean KL and its gradient w.r.t. the student logits.
pub fn kl_divergence_grad(
    teacher: &Tensor,
    student: &Tensor,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    same_shape(teacher, student)?;
    let n = teacher.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(student.values().len());
    for (t, s) in teacher.row_iter().zip(student.row_iter()) {
        let p = softmax(t, temperature);
        let q = softmax(s, temperature);
        loss += kl_row(t, s, temperature);
        grad.extend(
            q.iter()
                .zip(&p)
                .map(|(qi, pi)| (qi - pi) / (temperature * n)),
        );
    }
    Ok((loss / n, grad))
}

/// Objectives accepted by [`gradient`].
pub enum Loss<'a> {
    CrossEntropy {
        labels: &'a [usize],
    },
    Distill {
        teacher_logits: &'a Tensor,
        temperature: f64,
    },
}

/// Loss value and `d loss / d params` for one batch.
pub fn gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Tensor,
    loss: &Loss<'_>,
) -> Result<(f64, ParamVector)> {
    let trace = forward_trace(spec, params, batch)?;
    let logits = trace.output_tensor();
    let (value, d_logits) = match loss {
        Loss::CrossEntropy { labels } => cross_entropy(&logits, labels)?,
        Loss::Distill {
            teacher_logits,
            temperature,
        } => kl_divergence_grad(teacher_logits, &logits, *temperature)?,
    };
    if !value.is_finite() {
        return Err(Error::NumericInstability {
            layer: spec.layers().len() - 1,
        });
    }
    let grads = backward(spec, params, &trace, &d_logits, &[])?;
    Ok((value, grads.params))
}
