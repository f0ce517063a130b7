// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::{BetaSchedule, TrainConfig};
use crate::data::PartitionMode;
use crate::dfkd::DfkdConfig;
use crate::error::{Error, Result};
use crate::nn::{Activation, ModelSpec};
use crate::sim::PopulationConfig;

/// Gaussian blob classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub classes: usize,
    pub dim: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Real samples held by the server for `revive_dd`.
    pub public_samples: usize,
    /// Noise standard deviation around the unit class centers.
    pub spread: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 32,
            train_samples: 2000,
            test_samples: 1000,
            public_samples: 500,
            spread: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    /// Round-robin split instead of Dirichlet label skew.
    pub iid: bool,
    pub alpha: f64,
    /// Draw this many samples per client with replacement; unset means a
    /// disjoint split of the training set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_client: Option<usize>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            iid: false,
            alpha: 0.5,
            per_client: None,
        }
    }
}

impl PartitionConfig {
    pub fn mode(&self) -> PartitionMode {
        match self.per_client {
            Some(per_client) => PartitionMode::FixedSize { per_client },
            None => PartitionMode::Disjoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Sync,
    Async,
    Fedbuff,
    Afldw,
    Revive,
    ReviveDd,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Sync => "sync",
            StrategyKind::Async => "async",
            StrategyKind::Fedbuff => "fedbuff",
            StrategyKind::Afldw => "afldw",
            StrategyKind::Revive => "revive",
            StrategyKind::ReviveDd => "revive_dd",
        }
    }

    pub fn uses_beta(self) -> bool {
        matches!(
            self,
            StrategyKind::Afldw | StrategyKind::Revive | StrategyKind::ReviveDd
        )
    }

    pub fn uses_distillation(self) -> bool {
        matches!(self, StrategyKind::Revive | StrategyKind::ReviveDd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Updates averaged per server step; `fedbuff` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_size: Option<usize>,
    /// Staleness weighting; `afldw`, `revive` and `revive_dd` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<BetaSchedule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Simulated seconds between test evaluations.
    pub interval: f64,
    /// Simulated seconds to run for.
    pub horizon: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interval: 10.0,
            horizon: 1000.0,
        }
    }
}

/// Everything one experiment needs, loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub strategy: StrategyConfig,
    /// Distillation settings; `revive` and `revive_dd` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dfkd: Option<DfkdConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

impl ExperimentConfig {
    /// A default experiment running `kind`, with the strategy parameters it
    /// requires filled in.
    pub fn for_strategy(kind: StrategyKind) -> Self {
        let strategy = StrategyConfig {
            kind,
            buffer_size: (kind == StrategyKind::Fedbuff).then_some(2),
            beta: kind
                .uses_beta()
                .then_some(BetaSchedule::OneCosine { tau_star: 10.0 }),
        };
        Self {
            seeds: default_seeds(),
            out_dir: None,
            dataset: DatasetConfig::default(),
            partition: PartitionConfig::default(),
            model: ModelConfig::default(),
            population: PopulationConfig::default(),
            train: TrainConfig::default(),
            strategy,
            dfkd: kind.uses_distillation().then(DfkdConfig::default),
            eval: EvalConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let mut dims = vec![self.dataset.dim];
        dims.extend(&self.model.hidden);
        dims.push(self.dataset.classes);
        ModelSpec::classifier(&dims, self.model.activation)
    }

    /// The distillation settings in effect, defaults when the section is absent.
    pub fn dfkd_or_default(&self) -> DfkdConfig {
        self.dfkd.unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.strategy.kind;
        let name = kind.name();
        match (kind, self.strategy.buffer_size) {
            (StrategyKind::Fedbuff, None) => {
                return Err(Error::Config("fedbuff needs strategy.buffer_size".into()))
            }
            (StrategyKind::Fedbuff, Some(0)) => {
                return Err(Error::Config("buffer_size must be positive".into()))
            }
            (StrategyKind::Fedbuff, Some(_)) | (_, None) => {}
            (_, Some(_)) => {
                return Err(Error::Config(format!(
                    "buffer_size only applies to fedbuff, not {name}"
                )))
            }
        }
        match (kind.uses_beta(), &self.strategy.beta) {
            (true, None) => {
                return Err(Error::Config(format!("{name} needs strategy.beta")));
            }
            (true, Some(beta)) => beta.validate()?,
            (false, Some(_)) => {
                return Err(Error::Config(format!("beta does not apply to {name}")));
            }
            (false, None) => {}
        }
        match (kind.uses_distillation(), &self.dfkd) {
            (false, Some(_)) => {
                return Err(Error::Config(format!("dfkd does not apply to {name}")));
            }
            (_, Some(d)) => d.validate()?,
            _ => {}
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let d = &self.dataset;
        if d.classes < 2 || d.dim < 2 || d.test_samples == 0 {
            return Err(Error::Config(
                "dataset needs classes >= 2, dim >= 2 and a test set".into(),
            ));
        }
        if d.train_samples < self.population.clients {
            return Err(Error::Config(format!(
                "{} training samples cannot cover {} clients",
                d.train_samples, self.population.clients
            )));
        }
        if kind == StrategyKind::ReviveDd && d.public_samples < d.classes {
            return Err(Error::Config(
                "revive_dd needs at least one public sample per class".into(),
            ));
        }
        if !(d.spread > 0.0 && d.spread.is_finite()) {
            return Err(Error::Config("dataset.spread must be positive".into()));
        }
        let p = &self.partition;
        if !p.iid && !(p.alpha > 0.0 && p.alpha.is_finite()) {
            return Err(Error::Config("partition.alpha must be positive".into()));
        }
        if p.per_client == Some(0) {
            return Err(Error::Config(
                "partition.per_client must be positive".into(),
            ));
        }
        if p.iid && p.per_client.is_some() {
            return Err(Error::Config(
                "per_client applies to Dirichlet splits only".into(),
            ));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        self.population.validate()?;
        self.train.validate()?;
        if self.train.concurrency > self.population.clients {
            return Err(Error::Config(format!(
                "concurrency {} exceeds the {} clients",
                self.train.concurrency, self.population.clients
            )));
        }
        let e = &self.eval;
        if !(e.interval > 0.0 && e.interval.is_finite()) {
            return Err(Error::Config("eval.interval must be positive".into()));
        }
        if !(e.horizon >= 0.0 && e.horizon.is_finite()) {
            return Err(Error::Config("eval.horizon must be finite and >= 0".into()));
        }
        Ok(())
    }
}
