// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints its PASS/FAIL line; exits non-zero if any fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use revive_afl::aggregate::{local_train, BetaSchedule};
use revive_afl::data::{iid_partition, make_blobs};
use revive_afl::dfkd::{
    distill, DfkdConfig, DistillConfig, KdBuffer, KdRevive, SyntheticDataset, Teacher,
};
use revive_afl::harness::{
    run_experiment, staleness_histogram, time_to_target, write_metrics, ExperimentConfig,
    RunOutput, StrategyKind,
};
use revive_afl::nn::{
    forward_trace, gradient, kl_divergence, Activation, FeatureStats, Loss, ModelSpec, Tensor,
};
use revive_afl::sim::{Population, PopulationConfig, Simulator};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn gaussian_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let values = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    Tensor::matrix(rows, cols, values).unwrap()
}

// 1. Analytic gradients against central differences.
fn gradient_check() -> Verdict {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut good, mut total) = (0usize, 0usize);
    for model in 0..50 {
        let depth = rng.random_range(1..=2);
        let mut dims = vec![rng.random_range(2..=6)];
        for _ in 0..depth {
            dims.push(rng.random_range(2..=8));
        }
        let classes = rng.random_range(2..=5);
        dims.push(classes);
        let act = [Activation::Tanh, Activation::Relu, Activation::Identity][model % 3];
        let spec = ModelSpec::classifier(&dims, act).unwrap();
        let mut params = spec.init_params(&mut rng);
        for v in params.values_mut() {
            *v += 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let batch = rng.random_range(1..=6);
        let x = gaussian_tensor(&mut rng, batch, dims[0], 1.0);
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let teacher = gaussian_tensor(&mut rng, batch, classes, 2.0);
        let loss = if model % 2 == 0 {
            Loss::CrossEntropy { labels: &labels }
        } else {
            Loss::Distill {
                teacher_logits: &teacher,
                temperature: [1.0, 2.0, 4.0][model % 3],
            }
        };
        let (_, analytic) = gradient(&spec, &params, &x, &loss).unwrap();
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[i] += H;
            let mut minus = params.clone();
            minus.values_mut()[i] -= H;
            let fp = gradient(&spec, &plus, &x, &loss).unwrap().0;
            let fm = gradient(&spec, &minus, &x, &loss).unwrap().0;
            let fd = (fp - fm) / (2.0 * H);
            let a = analytic.values()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            total += 1;
            if rel < 1e-4 {
                good += 1;
            }
        }
    }
    let frac = good as f64 / total as f64;
    verdict(
        frac >= 0.99,
        format!("{good}/{total} coordinates within 1e-4 ({:.4})", frac),
    )
}

fn toy_config(kind: StrategyKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_strategy(kind);
    cfg.dataset.classes = 4;
    cfg.dataset.dim = 8;
    cfg.dataset.train_samples = 400;
    cfg.dataset.test_samples = 200;
    cfg.model.hidden = vec![16];
    cfg.population.clients = 20;
    cfg.train.concurrency = 5;
    cfg.train.local_steps = 5;
    cfg.train.client_lr = 0.01;
    cfg.train.server_lr = 0.5;
    cfg.eval.interval = 5.0;
    cfg.eval.horizon = 100.0;
    if let Some(dfkd) = cfg.dfkd.as_mut() {
        dfkd.synthesis.batch = 8;
        dfkd.distill.batch = 8;
        dfkd.distill.steps = 2;
    }
    cfg
}

fn same_run(a: &RunOutput, b: &RunOutput) -> bool {
    let bits = |o: &RunOutput| -> Vec<u64> {
        o.final_model.values().iter().map(|v| v.to_bits()).collect()
    };
    a.metrics == b.metrics && a.trace == b.trace && bits(a) == bits(b)
}

// 2. Strategies that must collapse to plain asynchronous updates.
fn aggregation_identities() -> Verdict {
    let seed = 3;
    let base = run_experiment(&toy_config(StrategyKind::Async), seed).unwrap();

    let mut fedbuff = toy_config(StrategyKind::Fedbuff);
    fedbuff.strategy.buffer_size = Some(1);
    let fedbuff_ok = same_run(&run_experiment(&fedbuff, seed).unwrap(), &base);

    let mut revive = toy_config(StrategyKind::Revive);
    revive.strategy.beta = Some(BetaSchedule::Constant { value: 0.0 });
    let revive_ok = same_run(&run_experiment(&revive, seed).unwrap(), &base);

    let mut single = toy_config(StrategyKind::Async);
    single.train.concurrency = 1;
    let single_base = run_experiment(&single, seed).unwrap();
    let mut afldw = toy_config(StrategyKind::Afldw);
    afldw.train.concurrency = 1;
    let afldw_out = run_experiment(&afldw, seed).unwrap();
    let fresh = afldw_out.trace.iter().all(|r| r.staleness == 0);
    let afldw_ok = fresh && same_run(&afldw_out, &single_base);

    let updates = base.metrics.last().map_or(0, |r| r.server_updates);
    verdict(
        fedbuff_ok && revive_ok && afldw_ok && updates > 0,
        format!(
            "fedbuff(B=1) {fedbuff_ok}, revive(beta=0) {revive_ok}, afl-dw(fresh) {afldw_ok}; \
             {updates} async updates"
        ),
    )
}

// 3. Exact one-cosine properties.
fn beta_schedule() -> Verdict {
    let mut failures = Vec::new();
    for tau_star in [2u64, 4, 10, 16, 64, 100] {
        let b = BetaSchedule::OneCosine {
            tau_star: tau_star as f64,
        };
        let at = |t| b.beta(t).unwrap();
        if at(0) != 0.0 {
            failures.push(format!("beta(0) for {tau_star}"));
        }
        if at(tau_star / 2) != 0.5 {
            failures.push(format!("beta(tau*/2) for {tau_star}"));
        }
        if (tau_star..=4 * tau_star).any(|t| at(t) != 1.0) || at(u64::MAX) != 1.0 {
            failures.push(format!("beta past tau* for {tau_star}"));
        }
        if (0..4 * tau_star).any(|t| at(t + 1) < at(t)) {
            failures.push(format!("monotonicity for {tau_star}"));
        }
    }
    let pass = failures.is_empty();
    let detail = if pass {
        "exact at 0, tau*/2 and [tau*, 4tau*], monotone, 6 values of tau*".into()
    } else {
        failures.join(", ")
    };
    verdict(pass, detail)
}

// 4. Staleness of plain asynchronous training with 10 jobs in flight.
fn staleness_law() -> Verdict {
    let population = Population::build(&PopulationConfig::default(), 21).unwrap();
    let mut sim = Simulator::new(population, 22);
    for _ in 0..10 {
        sim.request_dispatch().unwrap();
    }
    let mut staleness = Vec::new();
    while staleness.len() < 6000 {
        let job = sim.next_arrival().unwrap();
        sim.take_woken();
        staleness.push(sim.staleness_of(&job).unwrap());
        sim.record_server_update();
        sim.request_dispatch().unwrap();
    }
    let h = staleness_histogram(&staleness).unwrap();
    let ratio = h.p99 as f64 / h.p50.max(1) as f64;
    let mean_ok = (h.mean - 9.0).abs() <= 0.2 * 9.0;
    verdict(
        mean_ok && ratio >= 3.0,
        format!(
            "{} updates, mean {:.3} (7.2..10.8), p50 {}, p99 {}, ratio {:.2} (>= 3)",
            h.count, h.mean, h.p50, h.p99, ratio
        ),
    )
}

fn teacher(params: revive_afl::nn::ParamVector, spec: &ModelSpec, classes: usize) -> Teacher {
    Teacher {
        params,
        stats: FeatureStats::new(spec),
        label_counts: vec![1; classes],
        arrival: 1,
    }
}

// 5. One teacher, a frozen batch, default distillation settings.
fn distillation_descent() -> Verdict {
    let classes = 10;
    let spec = ModelSpec::classifier(&[32, 64, classes], Activation::Relu).unwrap();
    let cfg = DistillConfig::default();
    let mut passed = 0;
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let teacher_params = spec.init_params(&mut rng);
        let student = spec.init_params(&mut rng);
        let x = gaussian_tensor(&mut rng, 64, 32, 1.0);
        let labels: Vec<usize> = (0..64).map(|i| i % classes).collect();
        let frozen = SyntheticDataset::from_dataset(
            &revive_afl::data::Dataset::new(x.clone(), labels, classes).unwrap(),
        )
        .unwrap();
        let mut buffer = KdBuffer::new(1, spec.hash()).unwrap();
        buffer
            .push(teacher(teacher_params.clone(), &spec, classes))
            .unwrap();
        let delta = distill(&spec, &student, &buffer, &frozen, &cfg, &mut rng).unwrap();
        let mut after = student.clone();
        after.axpy(1.0, &delta).unwrap();
        let t = forward_trace(&spec, &teacher_params, &x)
            .unwrap()
            .output_tensor();
        let kl = |p| {
            let s = forward_trace(&spec, p, &x).unwrap().output_tensor();
            kl_divergence(&t, &s, cfg.temperature).unwrap()
        };
        let (before, after) = (kl(&student), kl(&after));
        worst = worst.max(after - before);
        if after < before {
            passed += 1;
        }
    }
    verdict(
        passed >= 38,
        format!(
            "{passed}/40 trials reduced KL (>= 38) at lr {}, {} steps; worst change {worst:.3e}",
            cfg.lr, cfg.steps
        ),
    )
}

// 6. Buffer, synthetic store and generator after 12 arrivals.
fn kd_bookkeeping() -> Verdict {
    let blobs = make_blobs(5, 10, 32, 400, 1.0).unwrap();
    let (partition, labels) = iid_partition(&blobs, 12, 6).unwrap();
    let spec = ModelSpec::classifier(&[32, 64, 10], Activation::Relu).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for capacity in [512, 8] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut cfg = DfkdConfig::default();
        cfg.synthesis.batch = 1;
        cfg.synthesis.meta_lambda = 1.0;
        cfg.synthetic_capacity = capacity;
        let mut kd = KdRevive::new(&spec, cfg, &mut rng).unwrap();
        let phi = kd.generator().params.clone();
        let global = spec.init_params(&mut rng);
        let mut phi_fixed = true;
        for client in 0..12 {
            let local = local_train(
                &spec, &global, &blobs, &partition, client, 3, 0.01, 16, &mut rng,
            )
            .unwrap();
            let counts = labels.client(client).unwrap().to_vec();
            kd.try_step(local.trained, local.stats, counts, &global, &mut rng)
                .unwrap();
            let same = kd
                .generator()
                .params
                .values()
                .iter()
                .zip(phi.values())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            phi_fixed &= same;
        }
        let arrivals = kd.buffer().arrivals();
        let buffer_ok = arrivals == (5..=12).collect::<Vec<u64>>();
        let size_ok = kd.synthetic().len() == 12.min(capacity);
        pass &= buffer_ok && size_ok && phi_fixed;
        details.push(format!(
            "capacity {capacity}: buffer {:?}..={:?} {buffer_ok}, |D_KD| {} {size_ok}, phi fixed {phi_fixed}",
            arrivals.first(),
            arrivals.last(),
            kd.synthetic().len()
        ));
    }
    verdict(pass, details.join("; "))
}

fn trend_configs() -> [(StrategyKind, ExperimentConfig); 3] {
    let load = |text: &str| ExperimentConfig::from_toml(text).unwrap();
    [
        (
            StrategyKind::Fedbuff,
            load(include_str!("../../../configs/blobs/fedbuff.toml")),
        ),
        (
            StrategyKind::Revive,
            load(include_str!("../../../configs/blobs/revive.toml")),
        ),
        (
            StrategyKind::Sync,
            load(include_str!("../../../configs/blobs/sync.toml")),
        ),
    ]
}

/// Metrics CSV bytes per strategy and seed.
fn trend_runs() -> Vec<(StrategyKind, u64, Vec<u8>, RunOutput)> {
    let mut out = Vec::new();
    for (kind, cfg) in trend_configs() {
        assert_eq!(cfg.strategy.kind, kind);
        for &seed in &cfg.seeds {
            let run = run_experiment(&cfg, seed).unwrap();
            let mut bytes = Vec::new();
            write_metrics(&run.metrics, &mut bytes).unwrap();
            out.push((kind, seed, bytes, run));
        }
    }
    out
}

// 7. Time-to-target ordering on the blobs task.
fn trend(runs: &[(StrategyKind, u64, Vec<u8>, RunOutput)]) -> Verdict {
    let get = |kind, seed| {
        &runs
            .iter()
            .find(|(k, s, _, _)| *k == kind && *s == seed)
            .expect("run exists")
            .3
            .metrics
    };
    let seeds: Vec<u64> = trend_configs()[0].1.seeds.clone();
    let (mut revive_wins, mut sync_slowest) = (0, 0);
    let mut rows = Vec::new();
    for &seed in &seeds {
        let fedbuff = get(StrategyKind::Fedbuff, seed);
        let best = fedbuff.iter().map(|r| r.test_accuracy).fold(0.0, f64::max);
        let target = 0.85 * best;
        let t = |kind| time_to_target(get(kind, seed), target).unwrap_or(f64::INFINITY);
        let (tf, tr, ts) = (
            t(StrategyKind::Fedbuff),
            t(StrategyKind::Revive),
            t(StrategyKind::Sync),
        );
        if tr <= tf {
            revive_wins += 1;
        }
        if ts > tf && ts > tr {
            sync_slowest += 1;
        }
        rows.push(format!(
            "seed {seed} target {target:.3}: fedbuff {tf} revive {tr} sync {ts}"
        ));
    }
    verdict(
        revive_wins >= 2 && sync_slowest == seeds.len(),
        format!(
            "revive <= fedbuff in {revive_wins}/{n}, sync slowest in {sync_slowest}/{n} [{}]",
            rows.join("; "),
            n = seeds.len()
        ),
    )
}

// 8. A second pass over criterion 7 gives the same bytes.
fn determinism(first: &[(StrategyKind, u64, Vec<u8>, RunOutput)]) -> Verdict {
    let second = trend_runs();
    let same = first.len() == second.len()
        && first
            .iter()
            .zip(&second)
            .all(|(a, b)| a.0 == b.0 && a.1 == b.1 && a.2 == b.2);
    let bytes: usize = first.iter().map(|r| r.2.len()).sum();
    verdict(
        same,
        format!("{} metrics files, {bytes} bytes compared", first.len()),
    )
}

fn main() {
    let mut results = Vec::new();
    let mut record = |n: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        println!(
            "criterion {n} {name}: {} ({:.1}s) {}",
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
        results.push((n, v.pass));
    };
    record(1, "gradient check", &mut gradient_check);
    record(2, "aggregation identities", &mut aggregation_identities);
    record(3, "beta schedule", &mut beta_schedule);
    record(4, "staleness law", &mut staleness_law);
    record(5, "distillation descent", &mut distillation_descent);
    record(6, "KD bookkeeping", &mut kd_bookkeeping);
    let start = Instant::now();
    let runs = trend_runs();
    println!("trend runs took {:.1}s", start.elapsed().as_secs_f64());
    record(7, "end-to-end trend", &mut || trend(&runs));
    record(8, "determinism", &mut || determinism(&runs));
    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        eprintln!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
