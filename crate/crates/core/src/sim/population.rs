// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedGroup {
    Slow,
    Medium,
    Fast,
}

/// Lognormal delay: `exp(mu + sigma * N(0, 1))` simulated seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayParams {
    pub mu: f64,
    pub sigma: f64,
}

impl DelayParams {
    pub fn median(&self) -> f64 {
        self.mu.exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return self.mu.exp();
        }
        LogNormal::new(self.mu, self.sigma)
            .expect("sigma validated non-negative")
            .sample(rng)
    }
}

/// Delay shape for one speed group. Each client's log-median is the group's
/// log-median shifted by a uniform draw in `[-jitter, jitter]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupDelays {
    pub compute_median: f64,
    pub upload_median: f64,
    pub sigma: f64,
    pub jitter: f64,
}

impl GroupDelays {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = self.compute_median > 0.0
            && self.upload_median > 0.0
            && self.sigma >= 0.0
            && self.jitter >= 0.0
            && [
                self.compute_median,
                self.upload_median,
                self.sigma,
                self.jitter,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid {name} delay parameters")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupMix {
    pub slow: f64,
    pub medium: f64,
    pub fast: f64,
}

impl Default for GroupMix {
    fn default() -> Self {
        Self {
            slow: 1.0 / 3.0,
            medium: 1.0 / 3.0,
            fast: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub clients: usize,
    /// Stationary fraction of clients available for dispatch.
    pub active_fraction: f64,
    /// Mean length of one on+off availability cycle, in simulated seconds.
    pub availability_cycle: f64,
    pub group_mix: GroupMix,
    pub slow: GroupDelays,
    pub medium: GroupDelays,
    pub fast: GroupDelays,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        let group = |compute_median: f64| GroupDelays {
            compute_median,
            upload_median: compute_median / 2.0,
            sigma: 0.5,
            jitter: 0.25,
        };
        Self {
            clients: 100,
            active_fraction: 1.0,
            availability_cycle: 200.0,
            group_mix: GroupMix::default(),
            slow: group(9.0),
            medium: group(3.0),
            fast: group(1.0),
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::Config("population needs at least one client".into()));
        }
        if !(self.active_fraction > 0.0 && self.active_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "active_fraction must lie in (0, 1], got {}",
                self.active_fraction
            )));
        }
        if !(self.availability_cycle > 0.0 && self.availability_cycle.is_finite()) {
            return Err(Error::Config("availability_cycle must be positive".into()));
        }
        let m = &self.group_mix;
        if [m.slow, m.medium, m.fast]
            .iter()
            .any(|&p| !(0.0..=1.0).contains(&p))
            || (m.slow + m.medium + m.fast - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(
                "group_mix must be proportions summing to 1".into(),
            ));
        }
        self.slow.validate("slow")?;
        self.medium.validate("medium")?;
        self.fast.validate("fast")?;
        Ok(())
    }

    pub fn group(&self, group: SpeedGroup) -> &GroupDelays {
        match group {
            SpeedGroup::Slow => &self.slow,
            SpeedGroup::Medium => &self.medium,
            SpeedGroup::Fast => &self.fast,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientProfile {
    pub id: usize,
    pub group: SpeedGroup,
    pub compute: DelayParams,
    pub upload: DelayParams,
}

impl ClientProfile {
    /// Total turnaround of one job: local compute plus upload.
    pub fn sample_lag<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.compute.sample(rng) + self.upload.sample(rng)
    }
}

/// Alternating exponential on/off process for one client.
#[derive(Debug, Clone)]
struct OnOff {
    active: bool,
    next_toggle: f64,
    rng: ChaCha8Rng,
}

/// Client profiles plus their availability over simulated time.
#[derive(Debug, Clone)]
pub struct Population {
    profiles: Vec<ClientProfile>,
    availability: Vec<OnOff>,
    on_mean: f64,
    off_mean: f64,
    always_on: bool,
}

/// Splits `n` by largest remainder so the counts sum to `n` exactly.
fn apportion(n: usize, shares: [f64; 3]) -> [usize; 3] {
    let raw = shares.map(|s| s * n as f64);
    let mut counts = raw.map(|r| r.floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if shares[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

impl Population {
    pub fn build(cfg: &PopulationConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = cfg.group_mix;
        let counts = apportion(cfg.clients, [m.slow, m.medium, m.fast]);
        let mut groups: Vec<SpeedGroup> = [SpeedGroup::Slow, SpeedGroup::Medium, SpeedGroup::Fast]
            .iter()
            .zip(counts)
            .flat_map(|(&g, c)| std::iter::repeat_n(g, c))
            .collect();
        groups.shuffle(&mut rng);

        let profiles = groups
            .into_iter()
            .enumerate()
            .map(|(id, group)| {
                let g = cfg.group(group);
                let mut shift = || {
                    if g.jitter > 0.0 {
                        rng.random_range(-g.jitter..=g.jitter)
                    } else {
                        0.0
                    }
                };
                let compute = DelayParams {
                    mu: g.compute_median.ln() + shift(),
                    sigma: g.sigma,
                };
                let upload = DelayParams {
                    mu: g.upload_median.ln() + shift(),
                    sigma: g.sigma,
                };
                ClientProfile {
                    id,
                    group,
                    compute,
                    upload,
                }
            })
            .collect();

        let always_on = cfg.active_fraction >= 1.0;
        let on_mean = cfg.active_fraction * cfg.availability_cycle;
        let off_mean = (1.0 - cfg.active_fraction) * cfg.availability_cycle;
        let availability = (0..cfg.clients)
            .map(|id| {
                let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_5a5a_0f0f_f0f0);
                r.set_stream(id as u64);
                let active = always_on || r.random::<f64>() < cfg.active_fraction;
                // memoryless: the residual of the current period has the full law
                let next_toggle = if always_on {
                    f64::INFINITY
                } else {
                    sample_exp(if active { on_mean } else { off_mean }, &mut r)
                };
                OnOff {
                    active,
                    next_toggle,
                    rng: r,
                }
            })
            .collect();

        Ok(Self {
            profiles,
            availability,
            on_mean,
            off_mean,
            always_on,
        })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn profile(&self, client: usize) -> Result<&ClientProfile> {
        self.profiles
            .get(client)
            .ok_or(Error::UnknownClient(client))
    }

    pub fn profiles(&self) -> &[ClientProfile] {
        &self.profiles
    }

    /// Availability of `client` at time `t`. Queries for one client must use
    /// nondecreasing times.
    pub fn is_active(&mut self, client: usize, t: f64) -> bool {
        if self.always_on {
            return true;
        }
        let (on, off) = (self.on_mean, self.off_mean);
        let state = &mut self.availability[client];
        while state.next_toggle <= t {
            state.active = !state.active;
            let mean = if state.active { on } else { off };
            state.next_toggle += sample_exp(mean, &mut state.rng);
        }
        state.active
    }

    /// Earliest time `>= t` at which `client` is available.
    pub fn next_active_time(&mut self, client: usize, t: f64) -> f64 {
        if self.is_active(client, t) {
            t
        } else {
            self.availability[client].next_toggle
        }
    }
}

fn sample_exp<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    Exp::new(1.0 / mean).expect("positive mean").sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_activity_means_always_available() {
        let mut pop = Population::build(&PopulationConfig::default(), 1).unwrap();
        for t in [0.0, 10.0, 1e6] {
            assert!((0..pop.len()).all(|c| pop.is_active(c, t)));
        }
    }

    #[test]
    fn mix_with_only_fast_clients() {
        let cfg = PopulationConfig {
            clients: 25,
            group_mix: GroupMix {
                slow: 0.0,
                medium: 0.0,
                fast: 1.0,
            },
            ..Default::default()
        };
        let pop = Population::build(&cfg, 3).unwrap();
        assert!(pop.profiles().iter().all(|p| p.group == SpeedGroup::Fast));
    }

    #[test]
    fn bad_mix_is_rejected() {
        let cfg = PopulationConfig {
            group_mix: GroupMix {
                slow: 0.5,
                medium: 0.5,
                fast: 0.5,
            },
            ..Default::default()
        };
        assert!(matches!(Population::build(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(100, [1.0 / 3.0; 3]).iter().sum::<usize>(), 100);
        assert_eq!(apportion(10, [0.0, 0.0, 1.0]), [0, 0, 10]);
        assert_eq!(apportion(7, [0.5, 0.5, 0.0]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn zero_sigma_is_deterministic() {
        let d = DelayParams {
            mu: 1.5,
            sigma: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(d.sample(&mut rng), 1.5f64.exp());
    }

    #[test]
    fn group_medians_are_ordered() {
        let pop = Population::build(&PopulationConfig::default(), 9).unwrap();
        let max_of = |g| {
            pop.profiles()
                .iter()
                .filter(|p| p.group == g)
                .map(|p| p.compute.median())
                .fold(0.0, f64::max)
        };
        let min_of = |g| {
            pop.profiles()
                .iter()
                .filter(|p| p.group == g)
                .map(|p| p.compute.median())
                .fold(f64::INFINITY, f64::min)
        };
        assert!(max_of(SpeedGroup::Fast) < min_of(SpeedGroup::Medium));
        assert!(max_of(SpeedGroup::Medium) < min_of(SpeedGroup::Slow));
    }
}
