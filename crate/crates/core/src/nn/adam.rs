// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use super::ParamVector;
use crate::error::{Error, Result};

/// Adam moments for one optimized vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update applied in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grad.len() != self.first.len() {
            return Err(Error::dims(self.first.len(), grad.len()));
        }
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NumericInstability { layer: bad });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * g;
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first[i] / c1;
            let v_hat = self.second[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::update`] over parameter vectors.
pub fn adam_step(
    params: &ParamVector,
    grad: &ParamVector,
    state: &mut AdamState,
    lr: f64,
) -> Result<ParamVector> {
    params.check_binding(grad)?;
    let mut out = params.clone();
    state.update(out.values_mut(), grad.values(), lr)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut st = AdamState::new(2);
        let mut p = vec![1.0, -2.0];
        st.update(&mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.step, 1);

        // Existing moments shrink by their betas.
        st.update(&mut p, &[1.0, 1.0], 0.0).unwrap();
        let (m, v) = (st.first.clone(), st.second.clone());
        st.update(&mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(st.first, vec![0.9 * m[0], 0.9 * m[1]]);
        assert_eq!(st.second, vec![0.999 * v[0], 0.999 * v[1]]);
        assert_eq!(st.step, 3);
    }

    #[test]
    fn first_step_is_lr_times_normalized_gradient() {
        let g = [0.5, -3.0, 1e-3];
        let lr = 0.01;
        let mut st = AdamState::new(3);
        let mut p = vec![0.0; 3];
        st.update(&mut p, &g, lr).unwrap();
        // direct evaluation of the recurrence from zero moments
        for (pi, gi) in p.iter().zip(g) {
            let m_hat = (0.1 * gi) / 0.1;
            let v_hat = (0.001 * gi * gi) / 0.001_f64;
            let expected = -lr * m_hat / (v_hat.sqrt() + 1e-8);
            assert!((pi - expected).abs() < 1e-15, "{pi} vs {expected}");
            assert!((pi + lr * gi / (gi.abs() + 1e-8)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_gradient_approaches_sign_step() {
        let mut st = AdamState::new(2);
        let mut p = vec![0.0, 0.0];
        let lr = 0.1;
        let mut last = p.clone();
        for _ in 0..2000 {
            last.clone_from(&p);
            st.update(&mut p, &[4.0, -0.25], lr).unwrap();
        }
        assert!(((p[0] - last[0]) + lr).abs() < 1e-6);
        assert!(((p[1] - last[1]) - lr).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut st = AdamState::new(2);
        let mut p = vec![0.0, 0.0];
        assert!(matches!(
            st.update(&mut p, &[0.0, f64::NAN], 0.1),
            Err(Error::NumericInstability { .. })
        ));
        assert_eq!(st.step, 0);
    }
}
