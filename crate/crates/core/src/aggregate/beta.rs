// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Staleness-to-trust map used by hybrid aggregation and down-weighting.
///
/// Every family is non-decreasing in staleness, takes values in `[0, 1]`,
/// and stays at 1 once it gets there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family", deny_unknown_fields)]
pub enum BetaSchedule {
    /// `(1 - cos(pi * min(tau, tau_star) / tau_star)) / 2`
    OneCosine { tau_star: f64 },
    /// `min(tau / tau_star, 1)`
    Linear { tau_star: f64 },
    /// 0 below `tau_star`, 1 from `tau_star` on.
    Step { tau_star: f64 },
    /// The same weight for every update.
    Constant { value: f64 },
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BetaSchedule::OneCosine { tau_star }
            | BetaSchedule::Linear { tau_star }
            | BetaSchedule::Step { tau_star } => {
                if tau_star > 0.0 && tau_star.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "tau_star must be positive, got {tau_star}"
                    )))
                }
            }
            BetaSchedule::Constant { value } => {
                if (0.0..=1.0).contains(&value) {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "constant beta {value} outside [0, 1]"
                    )))
                }
            }
        }
    }

    pub fn beta(&self, staleness: u64) -> Result<f64> {
        self.validate()?;
        let tau = staleness as f64;
        Ok(match *self {
            BetaSchedule::OneCosine { tau_star } => {
                let r = (tau / tau_star).min(1.0);
                (1.0 - cos_pi(r)) / 2.0
            }
            BetaSchedule::Linear { tau_star } => (tau / tau_star).min(1.0),
            BetaSchedule::Step { tau_star } => {
                if tau >= tau_star {
                    1.0
                } else {
                    0.0
                }
            }
            BetaSchedule::Constant { value } => value,
        })
    }
}

/// `cos(pi * r)` for `r` in `[0, 1]`, exact at 0, 1/2 and 1.
fn cos_pi(r: f64) -> f64 {
    if r <= 0.25 {
        (PI * r).cos()
    } else if r <= 0.75 {
        (PI * (0.5 - r)).sin()
    } else {
        -(PI * (1.0 - r)).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cosine_landmarks() {
        let s = BetaSchedule::OneCosine { tau_star: 8.0 };
        assert_eq!(s.beta(0).unwrap(), 0.0);
        assert_eq!(s.beta(4).unwrap(), 0.5);
        assert_eq!(s.beta(8).unwrap(), 1.0);
        assert_eq!(s.beta(16).unwrap(), 1.0);
    }

    #[test]
    fn cos_pi_matches_libm_elsewhere() {
        for i in 0..=100 {
            let r = f64::from(i) / 100.0;
            assert!((cos_pi(r) - (PI * r).cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn other_families() {
        let lin = BetaSchedule::Linear { tau_star: 4.0 };
        assert_eq!(lin.beta(1).unwrap(), 0.25);
        assert_eq!(lin.beta(9).unwrap(), 1.0);
        let step = BetaSchedule::Step { tau_star: 3.0 };
        assert_eq!(step.beta(2).unwrap(), 0.0);
        assert_eq!(step.beta(3).unwrap(), 1.0);
        let c = BetaSchedule::Constant { value: 0.3 };
        assert_eq!(c.beta(0).unwrap(), 0.3);
        assert_eq!(c.beta(1000).unwrap(), 0.3);
    }

    #[test]
    fn non_positive_tau_star_is_rejected() {
        assert!(matches!(
            BetaSchedule::OneCosine { tau_star: 0.0 }.beta(1),
            Err(Error::Config(_))
        ));
        assert!(BetaSchedule::Constant { value: 1.5 }.beta(0).is_err());
    }
}
