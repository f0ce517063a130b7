// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

//! Server-side aggregation rules and client local training.
//!
//! The free functions (`agg_*`) are pure maps from the current global model
//! to the next one. [`GlobalModel`] wraps them and keeps the count of server
//! updates, which is what staleness is measured in.

mod beta;
mod local;

pub use beta::BetaSchedule;
pub use local::{local_train, LocalResult, TrainConfig};

use crate::error::{Error, Result};
use crate::nn::{interpolate, ParamVector};

/// Vanilla asynchronous rule: `x + lr * delta`.
pub fn agg_async(x: &ParamVector, delta: &ParamVector, server_lr: f64) -> Result<ParamVector> {
    let mut out = x.clone();
    out.axpy(server_lr, delta)?;
    Ok(out)
}

/// The same step written as `(1 - lr) * x + lr * trained`. It agrees with
/// [`agg_async`] only when `trained - x` is the update, i.e. the client
/// started from the current model.
pub fn agg_async_interpolated(
    x: &ParamVector,
    trained: &ParamVector,
    server_lr: f64,
) -> Result<ParamVector> {
    interpolate(x, trained, server_lr)
}

/// Down-weighting rule: `x + lr * (1 - beta(tau)) * delta`.
pub fn agg_afldw(
    x: &ParamVector,
    delta: &ParamVector,
    staleness: u64,
    schedule: &BetaSchedule,
    server_lr: f64,
) -> Result<ParamVector> {
    let b = schedule.beta(staleness)?;
    let mut out = x.clone();
    out.axpy(server_lr * (1.0 - b), delta)?;
    Ok(out)
}

/// Hybrid rule: `x + lr * ((1 - beta(tau)) * delta + beta(tau) * delta_kd)`.
pub fn agg_revive(
    x: &ParamVector,
    delta: &ParamVector,
    staleness: u64,
    schedule: &BetaSchedule,
    server_lr: f64,
    kd_delta: &ParamVector,
) -> Result<ParamVector> {
    delta.check_binding(kd_delta)?;
    let b = schedule.beta(staleness)?;
    if b == 0.0 {
        return agg_async(x, delta, server_lr);
    }
    if b == 1.0 {
        return agg_async(x, kd_delta, server_lr);
    }
    let mixed: Vec<f64> = delta
        .values()
        .iter()
        .zip(kd_delta.values())
        .map(|(d, k)| (1.0 - b) * d + b * k)
        .collect();
    agg_async(x, &delta.with_values(mixed)?, server_lr)
}

/// Synchronous FedAvg step: `x + lr * mean(deltas)`.
pub fn agg_sync_round(
    x: &ParamVector,
    deltas: &[ParamVector],
    server_lr: f64,
) -> Result<ParamVector> {
    let mean = mean_of(deltas)?;
    agg_async(x, &mean, server_lr)
}

fn sum_of(deltas: &[ParamVector]) -> Result<ParamVector> {
    let (first, rest) = deltas
        .split_first()
        .ok_or_else(|| Error::Precondition("no updates to aggregate".into()))?;
    // Start from the first update rather than zeros so a single update is
    // carried through bit for bit.
    let mut sum = first.clone();
    for d in rest {
        sum.axpy(1.0, d)?;
    }
    Ok(sum)
}

fn mean_of(deltas: &[ParamVector]) -> Result<ParamVector> {
    let sum = sum_of(deltas)?;
    if deltas.len() == 1 {
        return Ok(sum);
    }
    Ok(sum.scaled(1.0 / deltas.len() as f64))
}

/// Pending updates of the buffered rule.
#[derive(Debug, Clone)]
pub struct UpdateBuffer {
    pending: Vec<ParamVector>,
    capacity: usize,
}

impl UpdateBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer size must be positive".into()));
        }
        Ok(Self {
            pending: Vec::with_capacity(capacity),
            capacity,
        })
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Buffered rule. Returns the next model and whether it was applied; when the
/// buffer fills, `x + (lr / B) * sum(buffer)` is taken and the buffer cleared.
pub fn agg_fedbuff(
    x: &ParamVector,
    delta: &ParamVector,
    buffer: &mut UpdateBuffer,
    server_lr: f64,
) -> Result<(ParamVector, bool)> {
    x.check_binding(delta)?;
    buffer.pending.push(delta.clone());
    if buffer.pending.len() < buffer.capacity {
        return Ok((x.clone(), false));
    }
    let sum = sum_of(&buffer.pending)?;
    buffer.pending.clear();
    let next = agg_async(x, &sum, server_lr / buffer.capacity as f64)?;
    Ok((next, true))
}

/// Global model together with the number of server updates applied to it.
#[derive(Debug, Clone)]
pub struct GlobalModel {
    params: ParamVector,
    updates: u64,
}

impl GlobalModel {
    pub fn new(params: ParamVector) -> Self {
        Self { params, updates: 0 }
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn commit(&mut self, next: ParamVector) {
        self.params = next;
        self.updates += 1;
    }

    pub fn apply_async(&mut self, delta: &ParamVector, server_lr: f64) -> Result<()> {
        let next = agg_async(&self.params, delta, server_lr)?;
        self.commit(next);
        Ok(())
    }

    /// Returns `true` when the buffer fired and the model changed.
    pub fn apply_fedbuff(
        &mut self,
        delta: &ParamVector,
        buffer: &mut UpdateBuffer,
        server_lr: f64,
    ) -> Result<bool> {
        let (next, applied) = agg_fedbuff(&self.params, delta, buffer, server_lr)?;
        if applied {
            self.commit(next);
        }
        Ok(applied)
    }

    /// Counts as a server update even when the weight is zero.
    pub fn apply_afldw(
        &mut self,
        delta: &ParamVector,
        staleness: u64,
        schedule: &BetaSchedule,
        server_lr: f64,
    ) -> Result<()> {
        let next = agg_afldw(&self.params, delta, staleness, schedule, server_lr)?;
        self.commit(next);
        Ok(())
    }

    pub fn apply_revive(
        &mut self,
        delta: &ParamVector,
        staleness: u64,
        schedule: &BetaSchedule,
        server_lr: f64,
        kd_delta: &ParamVector,
    ) -> Result<()> {
        let next = agg_revive(
            &self.params,
            delta,
            staleness,
            schedule,
            server_lr,
            kd_delta,
        )?;
        self.commit(next);
        Ok(())
    }

    pub fn apply_sync_round(&mut self, deltas: &[ParamVector], server_lr: f64) -> Result<()> {
        let next = agg_sync_round(&self.params, deltas, server_lr)?;
        self.commit(next);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, ModelSpec};

    fn spec() -> ModelSpec {
        // 2*2 + 2 = 6 parameters
        ModelSpec::classifier(&[2, 2], Activation::Identity).unwrap()
    }

    fn pv(values: [f64; 6]) -> ParamVector {
        spec().params_from(values.to_vec()).unwrap()
    }

    #[test]
    fn async_rule() {
        let x = pv([0.0; 6]);
        let d = pv([1.0; 6]);
        assert!(agg_async(&x, &d, 0.1)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.1));
        assert_eq!(agg_async(&d, &x, 0.7).unwrap(), d);
        let mut g = GlobalModel::new(d.clone());
        g.apply_async(&d, 0.0).unwrap();
        assert_eq!(g.params(), &d);
        assert_eq!(g.updates(), 1);
    }

    #[test]
    fn fedbuff_rules() {
        let x = pv([0.5, -1.0, 2.0, 0.0, 1.0, 3.0]);
        let v = pv([0.25, 1.0, -2.0, 4.0, 0.5, -0.125]);
        let neg = v.scaled(-1.0);
        let mut g = GlobalModel::new(x.clone());
        let mut buf = UpdateBuffer::new(2).unwrap();
        assert!(!g.apply_fedbuff(&v, &mut buf, 1.0).unwrap());
        assert_eq!(g.updates(), 0);
        assert_eq!(buf.len(), 1);
        assert!(g.apply_fedbuff(&neg, &mut buf, 1.0).unwrap());
        assert_eq!(g.params(), &x);
        assert_eq!(g.updates(), 1);
        assert!(buf.is_empty());

        let mut buf = UpdateBuffer::new(3).unwrap();
        let zero = pv([0.0; 6]);
        let e = |i: usize| {
            let mut a = [0.0; 6];
            a[i] = 1.0;
            pv(a)
        };
        let mut out = zero.clone();
        for i in 0..3 {
            out = agg_fedbuff(&out, &e(i), &mut buf, 3.0).unwrap().0;
        }
        assert_eq!(out.values(), &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn fedbuff_of_one_matches_async_bitwise() {
        let x = pv([0.1, 0.2, 0.3, -0.4, 1e-7, 3.3]);
        let d = pv([0.7, -0.3, 1e-9, 2.2, -5.5, 0.0]);
        let mut buf = UpdateBuffer::new(1).unwrap();
        let (b, applied) = agg_fedbuff(&x, &d, &mut buf, 0.37).unwrap();
        assert!(applied);
        assert_eq!(b, agg_async(&x, &d, 0.37).unwrap());
    }

    #[test]
    fn afldw_rules() {
        let s = BetaSchedule::OneCosine { tau_star: 4.0 };
        let x = pv([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let d = pv([0.5, -0.5, 1.0, -1.0, 2.0, 0.25]);
        assert_eq!(
            agg_afldw(&x, &d, 0, &s, 0.3).unwrap(),
            agg_async(&x, &d, 0.3).unwrap()
        );
        assert_eq!(agg_afldw(&x, &d, 4, &s, 0.3).unwrap(), x);
        assert_eq!(agg_afldw(&x, &d, 9, &s, 0.3).unwrap(), x);
        let half = agg_afldw(&x, &d, 2, &s, 0.5).unwrap();
        assert_eq!(half, agg_async(&x, &d, 0.25).unwrap());
        let mut g = GlobalModel::new(x.clone());
        g.apply_afldw(&d, 10, &s, 0.3).unwrap();
        assert_eq!((g.params(), g.updates()), (&x, 1));
    }

    #[test]
    fn revive_rules() {
        let s = BetaSchedule::OneCosine { tau_star: 4.0 };
        let x = pv([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let d = pv([0.5, -0.5, 1.0, -1.0, 2.0, 0.25]);
        let kd = pv([-0.25, 0.75, 0.0, 8.0, -2.0, 1.0]);
        assert_eq!(
            agg_revive(&x, &d, 0, &s, 0.3, &kd).unwrap(),
            agg_async(&x, &d, 0.3).unwrap()
        );
        assert_eq!(
            agg_revive(&x, &d, 5, &s, 0.3, &kd).unwrap(),
            agg_async(&x, &kd, 0.3).unwrap()
        );
        for tau in 0..6 {
            assert_eq!(
                agg_revive(&x, &d, tau, &s, 0.5, &d).unwrap(),
                agg_async(&x, &d, 0.5).unwrap()
            );
        }
        // tau = tau*/2 -> even split
        let mid = agg_revive(&x, &d, 2, &s, 1.0, &kd).unwrap();
        for ((m, xi), (di, ki)) in mid
            .values()
            .iter()
            .zip(x.values())
            .zip(d.values().iter().zip(kd.values()))
        {
            assert_eq!(*m, xi + (0.5 * di + 0.5 * ki));
        }
    }

    #[test]
    fn sync_rules() {
        let x = pv([1.0; 6]);
        let d = pv([0.5, 0.25, -1.0, 2.0, 0.0, 4.0]);
        let same = agg_sync_round(&x, &[d.clone(), d.clone(), d.clone()], 0.5).unwrap();
        assert_eq!(same, agg_async(&x, &d, 0.5).unwrap());
        let cancel = agg_sync_round(&x, &[d.clone(), d.scaled(-1.0)], 0.5).unwrap();
        assert_eq!(cancel, x);
        assert!(agg_sync_round(&x, &[], 1.0).is_err());
    }

    #[test]
    fn interpolation_form_agrees_only_on_fresh_base() {
        // dyadic values keep every intermediate exact
        let x = pv([0.5, -1.25, 2.0, 0.75, 3.0, -0.5]);
        let trained = pv([1.0, -1.0, 1.5, 0.25, 3.5, 0.5]);
        let delta = trained.sub(&x).unwrap();
        assert_eq!(
            agg_async(&x, &delta, 0.25).unwrap(),
            agg_async_interpolated(&x, &trained, 0.25).unwrap()
        );
        // Update computed against an older base, applied to the current one.
        let older = pv([0.0, -1.0, 2.5, 0.75, 2.0, -0.5]);
        let stale_delta = trained.sub(&older).unwrap();
        assert_ne!(
            agg_async(&x, &stale_delta, 0.25).unwrap(),
            agg_async_interpolated(&x, &trained, 0.25).unwrap()
        );
    }

    #[test]
    fn mismatched_models_are_rejected() {
        let other = ModelSpec::classifier(&[1, 3], Activation::Identity).unwrap();
        let x = pv([0.0; 6]);
        let d = other.zeros();
        assert!(matches!(agg_async(&x, &d, 1.0), Err(Error::Binding { .. })));
        let mut buf = UpdateBuffer::new(2).unwrap();
        assert!(agg_fedbuff(&x, &d, &mut buf, 1.0).is_err());
        assert!(buf.is_empty());
    }
}
