// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use crate::error::{Error, Result};

/// Flattened model parameters bound to the [`ModelSpec`](super::ModelSpec)
/// they were created for.
///
/// The binding is a layout hash. Arithmetic between vectors of different
/// layouts is rejected with [`Error::Binding`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    spec_hash: u64,
}

impl ParamVector {
    pub(crate) fn from_raw(values: Vec<f64>, spec_hash: u64) -> Self {
        Self { values, spec_hash }
    }

    pub fn spec_hash(&self) -> u64 {
        self.spec_hash
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// A zero vector with the same binding.
    pub fn zeros_like(&self) -> Self {
        Self::from_raw(vec![0.0; self.values.len()], self.spec_hash)
    }

    /// Replaces the values while keeping the binding.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::dims(self.values.len(), values.len()));
        }
        Ok(Self::from_raw(values, self.spec_hash))
    }

    pub fn check_binding(&self, other: &ParamVector) -> Result<()> {
        if self.spec_hash != other.spec_hash || self.values.len() != other.values.len() {
            return Err(Error::Binding {
                left: self.spec_hash,
                right: other.spec_hash,
            });
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        self.check_binding(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// `self - other`
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_binding(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::from_raw(values, self.spec_hash))
    }

    pub fn scaled(&self, alpha: f64) -> ParamVector {
        Self::from_raw(
            self.values.iter().map(|v| alpha * v).collect(),
            self.spec_hash,
        )
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `(1 - w) * a + w * b`, elementwise.
///
/// The endpoints return exact copies so that `w = 0` and `w = 1` never
/// perturb signed zeros or propagate non-finite values from the unused side.
pub fn interpolate(a: &ParamVector, b: &ParamVector, w: f64) -> Result<ParamVector> {
    a.check_binding(b)?;
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Config(format!(
            "interpolation weight {w} outside [0, 1]"
        )));
    }
    if w == 0.0 {
        return Ok(a.clone());
    }
    if w == 1.0 {
        return Ok(b.clone());
    }
    let keep = 1.0 - w;
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| keep * x + w * y)
        .collect();
    Ok(ParamVector::from_raw(values, a.spec_hash))
}
