// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, StrategyKind};
use super::metrics::{evaluate, MetricsRecord};
use crate::aggregate::{local_train, BetaSchedule, GlobalModel, LocalResult, UpdateBuffer};
use crate::data::{
    dirichlet_partition, iid_partition, make_blobs, ClientPartition, Dataset, LabelDistribution,
};
use crate::dfkd::KdRevive;
use crate::error::{Error, Result};
use crate::nn::{ModelSpec, ParamVector};
use crate::sim::{InFlightJob, Population, Simulator, TraceRow};

/// Independent random streams of one run, all derived from the run seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Train = 1,
    Test = 2,
    Public = 3,
    Partition = 4,
    Population = 5,
    Simulator = 6,
    Init = 7,
    Jobs = 8,
    Distill = 9,
}

fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

fn sub_seed(seed: u64, which: Stream) -> u64 {
    stream(seed, which).next_u64()
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRecord>,
    /// One row per processed upload.
    pub trace: Vec<TraceRow>,
    pub final_model: ParamVector,
}

/// Data and model shared by every strategy under the same seed.
pub struct Setup {
    pub spec: ModelSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub partition: ClientPartition,
    pub labels: LabelDistribution,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let d = &cfg.dataset;
        let train = make_blobs(
            sub_seed(seed, Stream::Train),
            d.classes,
            d.dim,
            d.train_samples,
            d.spread,
        )?;
        let test = make_blobs(
            sub_seed(seed, Stream::Test),
            d.classes,
            d.dim,
            d.test_samples,
            d.spread,
        )?;
        let clients = cfg.population.clients;
        let part_seed = sub_seed(seed, Stream::Partition);
        let (partition, labels) = if cfg.partition.iid {
            iid_partition(&train, clients, part_seed)?
        } else {
            dirichlet_partition(
                &train,
                clients,
                cfg.partition.alpha,
                cfg.partition.mode(),
                part_seed,
            )?
        };
        Ok(Self {
            spec: cfg.model_spec()?,
            train,
            test,
            partition,
            labels,
        })
    }
}

struct Engine<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    setup: Setup,
    sim: Simulator,
    global: GlobalModel,
    /// Local results of in-flight jobs, computed when they are dispatched.
    running: BTreeMap<u64, LocalResult>,
    metrics: Vec<MetricsRecord>,
    trace: Vec<TraceRow>,
    next_eval: f64,
    evals: usize,
    best: f64,
    last_staleness: Option<u64>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a ExperimentConfig, seed: u64) -> Result<Self> {
        let setup = Setup::new(cfg, seed)?;
        let population = Population::build(&cfg.population, sub_seed(seed, Stream::Population))?;
        let sim = Simulator::new(population, sub_seed(seed, Stream::Simulator));
        let global = GlobalModel::new(setup.spec.init_params(&mut stream(seed, Stream::Init)));
        Ok(Self {
            cfg,
            seed,
            setup,
            sim,
            global,
            running: BTreeMap::new(),
            metrics: Vec::new(),
            trace: Vec::new(),
            next_eval: 0.0,
            evals: 0,
            best: f64::NEG_INFINITY,
            last_staleness: None,
        })
    }

    fn horizon(&self) -> f64 {
        self.cfg.eval.horizon
    }

    fn update_limit_reached(&self) -> bool {
        let max = self.cfg.train.max_server_updates;
        max > 0 && self.global.updates() >= max
    }

    fn evaluate_at(&mut self, time: f64) -> Result<()> {
        let (acc, loss) = evaluate(&self.setup.spec, self.global.params(), &self.setup.test)?;
        self.best = self.best.max(acc);
        self.metrics.push(MetricsRecord {
            seed: self.seed,
            sim_time: time,
            server_updates: self.global.updates(),
            test_accuracy: acc,
            test_loss: loss,
            best_so_far: self.best,
            last_staleness: self.last_staleness,
        });
        Ok(())
    }

    /// Emits every scheduled evaluation strictly before `time`.
    fn evaluate_until(&mut self, time: f64) -> Result<()> {
        while self.next_eval < time && self.next_eval <= self.horizon() {
            self.evaluate_at(self.next_eval)?;
            self.evals += 1;
            self.next_eval = self.evals as f64 * self.cfg.eval.interval;
        }
        Ok(())
    }

    /// Trains each job from the current global model. Jobs are dispatched at
    /// the current version, so this is the model they start from.
    fn start(&mut self, jobs: Vec<InFlightJob>) -> Result<()> {
        let t = &self.cfg.train;
        for job in jobs {
            debug_assert_eq!(job.version, self.global.updates());
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.seed, Stream::Jobs));
            rng.set_stream(job.id);
            let result = local_train(
                &self.setup.spec,
                self.global.params(),
                &self.setup.train,
                &self.setup.partition,
                job.client,
                t.local_steps,
                t.client_lr,
                t.batch_size,
                &mut rng,
            )?;
            self.running.insert(job.id, result);
        }
        Ok(())
    }

    fn request(&mut self) -> Result<()> {
        let jobs = self.sim.request_dispatch()?;
        self.start(jobs)
    }

    /// Next upload within the horizon, with evaluations emitted up to it.
    /// `None` when the run is over.
    fn next_arrival(&mut self) -> Result<Option<(InFlightJob, LocalResult)>> {
        let job = match self.sim.next_arrival() {
            Ok(job) => job,
            Err(Error::SimulationExhausted) => return Ok(None),
            Err(e) => return Err(e),
        };
        let woken = self.sim.take_woken();
        self.start(woken)?;
        self.evaluate_until(job.arrival_time)?;
        if job.arrival_time > self.horizon() {
            return Ok(None);
        }
        let result = self
            .running
            .remove(&job.id)
            .ok_or_else(|| Error::Consistency(format!("job {} was never started", job.id)))?;
        Ok(Some((job, result)))
    }

    fn log_arrival(&mut self, job: &InFlightJob, staleness: u64) {
        self.last_staleness = Some(staleness);
        self.trace.push(TraceRow {
            event_seq: self.trace.len() as u64,
            sim_time: job.arrival_time,
            client_id: job.client,
            origin_version: job.version,
            staleness,
        });
    }

    fn finish(mut self, stopped_early: bool) -> Result<RunOutput> {
        if stopped_early {
            let now = self.sim.now();
            self.evaluate_until(now)?;
            if self.metrics.last().is_none_or(|r| r.sim_time < now) {
                self.evaluate_at(now)?;
            }
        } else {
            self.evaluate_until(f64::INFINITY)?;
        }
        Ok(RunOutput {
            metrics: self.metrics,
            trace: self.trace,
            final_model: self.global.params().clone(),
        })
    }

    fn run_async(mut self) -> Result<RunOutput> {
        let cfg = self.cfg;
        let lr = cfg.train.server_lr;
        let kind = cfg.strategy.kind;
        let beta = cfg
            .strategy
            .beta
            .unwrap_or(BetaSchedule::Constant { value: 0.0 });
        let mut buffer = UpdateBuffer::new(cfg.strategy.buffer_size.unwrap_or(1))?;
        let mut kd = if kind.uses_distillation() {
            let mut kd_rng = stream(self.seed, Stream::Distill);
            let mut kd = KdRevive::new(&self.setup.spec, cfg.dfkd_or_default(), &mut kd_rng)?;
            if kind == StrategyKind::ReviveDd {
                let d = &cfg.dataset;
                let public = make_blobs(
                    sub_seed(self.seed, Stream::Public),
                    d.classes,
                    d.dim,
                    d.public_samples,
                    d.spread,
                )?;
                kd = kd.with_public_data(&public)?;
            }
            Some((kd, kd_rng))
        } else {
            None
        };

        for _ in 0..cfg.train.concurrency {
            self.request()?;
        }
        while !self.update_limit_reached() {
            let Some((job, local)) = self.next_arrival()? else {
                return self.finish(false);
            };
            let staleness = self.sim.staleness_of(&job)?;
            self.log_arrival(&job, staleness);
            let applied = match kind {
                StrategyKind::Async => {
                    self.global.apply_async(&local.delta, lr)?;
                    true
                }
                StrategyKind::Fedbuff => {
                    self.global.apply_fedbuff(&local.delta, &mut buffer, lr)?
                }
                StrategyKind::Afldw => {
                    self.global
                        .apply_afldw(&local.delta, staleness, &beta, lr)?;
                    true
                }
                StrategyKind::Revive | StrategyKind::ReviveDd => {
                    let (kd, kd_rng) = kd.as_mut().expect("distillation state exists");
                    let counts = self.setup.labels.client(job.client)?.to_vec();
                    let kd_delta = kd.step(
                        local.trained,
                        local.stats,
                        counts,
                        self.global.params(),
                        kd_rng,
                    );
                    self.global
                        .apply_revive(&local.delta, staleness, &beta, lr, &kd_delta)?;
                    true
                }
                StrategyKind::Sync => unreachable!("synchronous runs use run_sync"),
            };
            if applied {
                self.sim.record_server_update();
            }
            self.request()?;
        }
        self.finish(true)
    }

    fn run_sync(mut self) -> Result<RunOutput> {
        let cfg = self.cfg;
        let per_round = cfg.train.concurrency;
        while !self.update_limit_reached() {
            for _ in 0..per_round {
                self.request()?;
            }
            let mut round = Vec::with_capacity(per_round);
            while round.len() < per_round {
                let Some((job, local)) = self.next_arrival()? else {
                    return self.finish(false);
                };
                self.log_arrival(&job, self.sim.staleness_of(&job)?);
                round.push((job.id, local.delta));
            }
            round.sort_by_key(|(id, _)| *id);
            let deltas: Vec<_> = round.into_iter().map(|(_, d)| d).collect();
            self.global.apply_sync_round(&deltas, cfg.train.server_lr)?;
            self.sim.record_server_update();
        }
        self.finish(true)
    }
}

/// Runs one seed of `cfg` to its horizon or update limit.
///
/// Evaluations happen every `eval.interval` simulated seconds starting at 0
/// and reflect all uploads that landed before that time.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let engine = Engine::new(cfg, seed)?;
    match cfg.strategy.kind {
        StrategyKind::Sync => engine.run_sync(),
        _ => engine.run_async(),
    }
}
