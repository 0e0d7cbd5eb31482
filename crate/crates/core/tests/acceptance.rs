//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use circsched_core::config::{LearnerKind, ScenarioConfig};
use circsched_core::data::Dataset;
use circsched_core::learner::LinearModel;
use circsched_core::report::{aggregate, run_compare, write_trace};
use circsched_core::resources::sample_round;
use circsched_core::sched::{decide_round, efficiency_score, evaluate_candidate};
use circsched_core::timing::{comm_time, comp_time, idle_time};
use circsched_core::{
    run_simulation, LinkProfile, ModelSpec, NodeId, NodeProfile, RoundDecision, ScheduleState,
    SchedulerConstants, StrategyKind, Topology, UtilizationDistribution,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn slack(v: f64) -> f64 {
    1e-6 * v.max(1.0)
}

fn grid_oracle(counts: &[u64], prior: &[f64], v: f64) -> f64 {
    let axis = |l: u64| -> Vec<f64> {
        if l == 0 {
            vec![0.0]
        } else {
            (0..=100).map(|k| l as f64 * k as f64 / 100.0).collect()
        }
    };
    let axes: Vec<Vec<f64>> = counts.iter().map(|&l| axis(l)).collect();
    let mut best = 0.0f64;
    let mut rec = |take: &[f64]| {
        let y: Vec<f64> = prior.iter().zip(take).map(|(p, t)| p + t).collect();
        if variance(&y) <= v {
            best = best.max(take.iter().sum());
        }
    };
    match axes.len() {
        2 => {
            for &a in &axes[0] {
                for &b in &axes[1] {
                    rec(&[a, b]);
                }
            }
        }
        3 => {
            for &a in &axes[0] {
                for &b in &axes[1] {
                    for &c in &axes[2] {
                        rec(&[a, b, c]);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    best
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let vs = [0.0, 1.0, 25.0, 1e6];
    let results: Vec<Option<String>> = (0..600u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
            let labels = if i % 2 == 0 { 2 } else { 3 };
            let counts: Vec<u64> = (0..labels).map(|_| rng.gen_range(0..=20)).collect();
            let prior: Vec<f64> = (0..labels).map(|_| rng.gen_range(0.0..30.0)).collect();
            let v = vs[(i / 2) as usize % vs.len()];
            let profile = NodeProfile::new(counts.clone(), 1e13).unwrap();
            let mut state = ScheduleState::new(labels, NodeId(0));
            state.cumulative_label_usage = prior.clone();
            state.cumulative_samples = prior.iter().sum();
            let constants = SchedulerConstants::new(v, 1.0, 1).unwrap();
            let sol = circsched_core::solve_max_samples(&profile, &state, &constants);
            let y: Vec<f64> = (0..labels)
                .map(|c| prior[c] + counts[c] as f64 * sol.allocation.0[c])
                .collect();
            let oracle = grid_oracle(&counts, &prior, v);
            let tol = 2.0 * 0.01 * counts.iter().sum::<u64>() as f64;
            if sol.samples > 0.0 && variance(&y) > v + slack(v) {
                return Some(format!("instance {i}: infeasible solution"));
            }
            if sol.samples < oracle - tol {
                return Some(format!("instance {i}: {} below oracle {oracle}", sol.samples));
            }
            None
        })
        .collect();
    let failures: Vec<String> = results.into_iter().flatten().collect();
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(60),
        format!("600 instances, {} failures, {:.1}s {}", failures.len(), elapsed.as_secs_f64(), failures.first().cloned().unwrap_or_default()),
    )
}

fn criterion_2() -> Outcome {
    let m = ModelSpec::mnist_cnn();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
    let constants = SchedulerConstants::new(1e4, 1.0, 1).unwrap();
    let checks = [
        ("comp 1000 @ 10 TFLOPS", comp_time(1000.0, &m, 10e12).unwrap(), 0.007157),
        ("comp 1 @ 10 TFLOPS", comp_time(1.0, &m, 10e12).unwrap(), 7.157e-6),
        ("comm @ 200 Mbps", comm_time(NodeId(0), NodeId(1), &m, 200e6).unwrap(), 0.1921),
        ("comm @ 100 Mbps", comm_time(NodeId(0), NodeId(1), &m, 100e6).unwrap(), 0.3842),
        ("resnet comp 100 @ 1%", comp_time(100.0, &ModelSpec::resnet18(), 0.01 * 10e12).unwrap(), 10.65),
        ("comm self", comm_time(NodeId(2), NodeId(2), &m, 200e6).unwrap(), 0.0),
        ("comm @ 1 Mbps", comm_time(NodeId(0), NodeId(1), &m, 1e6).unwrap(), 38.42),
        ("idle below one sample", idle_time(0.5, &constants), 1.0),
        ("idle when training", idle_time(1.0, &constants), 0.0),
    ];
    let bad: Vec<&str> = checks
        .iter()
        .filter(|(_, got, want)| !(close(*got, *want) || (*want == 0.0 && *got == 0.0)))
        .map(|(n, _, _)| *n)
        .collect();
    outcome(bad.is_empty(), format!("{} hand values, mismatches: {bad:?}", checks.len()))
}

fn o3(samples: f64, holder: usize, node: usize, s_total: f64, t_total: f64, r: f64, b: f64, m: &ModelSpec, h: f64) -> f64 {
    let comp = m.flops_per_sample * samples / r;
    let (comm, idle) = if samples >= 1.0 {
        (if node == holder { 0.0 } else { m.model_bits / b }, 0.0)
    } else {
        (0.0, h)
    };
    (samples + s_total) / (comp + comm + idle + t_total + 1.0)
}

fn criterion_3() -> Outcome {
    let model = ModelSpec::mnist_cnn();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut rising, mut falling, mut violations, mut evaluations) = (0, 0, Vec::new(), 0);
    while evaluations < 1000 {
        let labels = rng.gen_range(2..=10);
        let nodes = rng.gen_range(2..=6);
        let mut table: Vec<Vec<u64>> = (0..nodes)
            .map(|_| (0..labels).map(|_| if rng.gen_bool(0.5) { rng.gen_range(1..500) } else { 0 }).collect())
            .collect();
        for c in 0..labels {
            table[c % nodes][c] = table[c % nodes][c].max(1);
        }
        let profiles: Vec<NodeProfile> = table.into_iter().map(|t| NodeProfile::new(t, 10e12).unwrap()).collect();
        let topology = Topology::new(profiles, LinkProfile::uniform(nodes, 200e6).unwrap()).unwrap();
        let v = [100.0, 1e4, 1e6][rng.gen_range(0..3)];
        let h = rng.gen_range(0.1..5.0);
        let constants = SchedulerConstants::new(v, h, 1).unwrap();
        let holder = rng.gen_range(0..nodes);
        let mut state = ScheduleState::new(labels, NodeId(holder));
        let scale = [10.0, 1e3, 1e5][rng.gen_range(0..3)];
        let base = rng.gen_range(0.0..scale);
        state.cumulative_label_usage = (0..labels).map(|_| base + rng.gen_range(0.0..v.sqrt())).collect();
        state.cumulative_samples = state.cumulative_label_usage.iter().sum();
        let horizon = [0.01, 1.0, 100.0][rng.gen_range(0..3)];
        state.cumulative_time = rng.gen_range(0.0..horizon);
        let resources = sample_round(
            &topology.profiles,
            &topology.links,
            &UtilizationDistribution::compute_default(),
            &UtilizationDistribution::bandwidth_default(),
            &mut rng,
        );

        for node in topology.nodes() {
            evaluations += 1;
            let ev = evaluate_candidate(node, &topology.profiles[node.0], &state, &resources, &model, &constants);
            let r = resources.compute(node);
            let b = resources.bandwidth(state.holder, node);
            let comm = if node.0 == holder { 0.0 } else { model.model_bits / b };
            let score = |s: f64| o3(s, holder, node.0, state.cumulative_samples, state.cumulative_time, r, b, &model, h);
            let crate_zero = efficiency_score(node, 0.0, &state, &resources, &model, &constants);
            if (crate_zero - score(0.0)).abs() > 1e-12 * score(0.0) {
                violations.push(format!("O3(0) mismatch at evaluation {evaluations}"));
            }
            if ev.train && ev.objective_committed < ev.objective_at_zero {
                violations.push(format!("committed below O3(0) at evaluation {evaluations}"));
            }
            if ev.s_star >= 1.0 {
                let grid: Vec<f64> = (0..=50).map(|k| 1.0 + (ev.s_star - 1.0) * k as f64 / 50.0).collect();
                let values: Vec<f64> = grid.iter().map(|&s| score(s)).collect();
                let tol = |a: f64| 1e-12 * a.abs();
                if state.cumulative_samples <= (r / model.flops_per_sample) * (comm + 0.0 + state.cumulative_time + 1.0) {
                    rising += 1;
                    if values.windows(2).any(|w| w[1] < w[0] - tol(w[0])) {
                        violations.push(format!("O3 decreasing at evaluation {evaluations}"));
                    }
                } else {
                    falling += 1;
                    if values.windows(2).any(|w| w[1] > w[0] + tol(w[0])) {
                        violations.push(format!("O3 increasing at evaluation {evaluations}"));
                    }
                }
            }
        }
        let decision = decide_round(&state, &topology, &resources, &model, &constants);
        if let RoundDecision::Train { node, counts, .. } = &decision {
            let s = counts.iter().sum::<u64>() as f64;
            let committed = efficiency_score(*node, s, &state, &resources, &model, &constants);
            let zero = efficiency_score(*node, 0.0, &state, &resources, &model, &constants);
            if committed < zero {
                violations.push("decide_round committed below O3(0)".into());
            }
        }
    }
    outcome(
        violations.is_empty() && rising > 0 && falling > 0,
        format!(
            "{evaluations} evaluations ({rising} nondecreasing-regime, {falling} nonincreasing-regime grids), {} violations {}",
            violations.len(),
            violations.first().cloned().unwrap_or_default()
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut cfg = ScenarioConfig::preset("mnist-5-uneven").unwrap().unwrap();
    cfg.learner.kind = LearnerKind::Surrogate;
    cfg.rounds = 500;
    let v = cfg.variance_bound_samples_sq;
    let labels = cfg.label_count() as f64;
    let jobs: Vec<(StrategyKind, u64)> = [StrategyKind::LoadAware, StrategyKind::VarianceFirst]
        .into_iter()
        .flat_map(|k| (0..5).map(move |s| (k, s)))
        .collect();
    let worst: Vec<(f64, f64, usize)> = jobs
        .par_iter()
        .map(|&(k, seed)| {
            let mut c = cfg.clone();
            c.strategy = k;
            c.seed = seed;
            let (trace, _) = run_simulation(&c).unwrap();
            let mut max_var = 0.0f64;
            let mut max_dev = 0.0f64;
            for r in &trace {
                max_var = max_var.max(variance(&r.label_usage));
                let mean = r.label_usage.iter().sum::<f64>() / labels;
                for u in &r.label_usage {
                    max_dev = max_dev.max((u - mean).abs());
                }
            }
            let trained = trace.iter().filter(|r| r.decision.node().is_some()).count();
            (max_var, max_dev, trained)
        })
        .collect();
    let max_var = worst.iter().map(|w| w.0).fold(0.0, f64::max);
    let max_dev = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let min_trained = worst.iter().map(|w| w.2).min().unwrap();
    outcome(
        max_var <= v + slack(v) && max_dev <= (v * labels).sqrt() && min_trained > 0,
        format!(
            "10 runs x 500 rounds: max variance {max_var:.3} (bound {v}), max deviation {max_dev:.2} (bound {:.2}), fewest training rounds {min_trained}",
            (v * labels).sqrt()
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..10).collect();
    let mut detail = Vec::new();
    let mut passed = true;
    for (preset, must_beat) in [
        ("blobs-5-uneven", StrategyKind::ALL.to_vec()),
        ("blobs-5", vec![StrategyKind::Random, StrategyKind::VarianceFirst]),
    ] {
        let cfg = ScenarioConfig::preset(preset).unwrap().unwrap();
        let runs = run_compare(&cfg, &StrategyKind::ALL, &seeds).unwrap();
        let aggs: Vec<_> = aggregate(&runs).into_iter().filter(|a| a.threshold == 0.7).collect();
        let median = |k: StrategyKind| aggs.iter().find(|a| a.strategy == k.as_str()).unwrap().median;
        let ours = median(StrategyKind::LoadAware);
        for k in must_beat.into_iter().filter(|&k| k != StrategyKind::LoadAware) {
            passed &= ours < median(k);
        }
        let cells: Vec<String> = aggs.iter().map(|a| format!("{}={:.3}", a.strategy, a.median)).collect();
        detail.push(format!("{preset}: {}", cells.join(" ")));
    }
    let elapsed = start.elapsed();
    passed &= elapsed < Duration::from_secs(600);
    outcome(passed, format!("median time-to-70% [s]; {}; {:.1}s", detail.join("; "), elapsed.as_secs_f64()))
}

fn criterion_6() -> Outcome {
    let mut cfg = ScenarioConfig::preset("cifar-3").unwrap().unwrap();
    cfg.variance_bound_samples_sq = 0.0;
    cfg.idle_wait_sec = 1.5;
    cfg.rounds = 500;
    let mut detail = Vec::new();
    let mut passed = true;
    for k in [StrategyKind::LoadAware, StrategyKind::VarianceFirst] {
        cfg.strategy = k;
        let (trace, _) = run_simulation(&cfg).unwrap();
        let t = trace.last().unwrap().cumulative_time;
        let all_skip = trace.iter().all(|r| r.decision == RoundDecision::Skip);
        passed &= all_skip && t == 500.0 * 1.5;
        detail.push(format!("{k}: cumulative time {t}, all skip {all_skip}"));
    }
    outcome(passed, format!("K=500, H=1.5, expected 750; {}", detail.join("; ")))
}

fn criterion_7() -> Outcome {
    let mut detail = Vec::new();
    let mut passed = true;
    for preset in ["blobs-5-uneven", "cifar-5-uneven"] {
        let mut cfg = ScenarioConfig::preset(preset).unwrap().unwrap();
        cfg.seed = 7;
        let bytes: Vec<Vec<u8>> = (0..2)
            .map(|_| {
                let (trace, _) = run_simulation(&cfg).unwrap();
                let mut buf = Vec::new();
                write_trace(&mut buf, &trace, cfg.label_count()).unwrap();
                buf
            })
            .collect();
        let same = bytes[0] == bytes[1];
        passed &= same;
        detail.push(format!("{preset}: {} bytes, identical {same}", bytes[0].len()));
    }
    outcome(passed, format!("seed 7 twice; {}", detail.join("; ")))
}

fn criterion_8() -> Outcome {
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut failures = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(8000 + seed);
        let classes = rng.gen_range(2..=5);
        let dim = rng.gen_range(1..=6);
        let n = rng.gen_range(1..=8);
        let data = Dataset {
            dim,
            classes,
            features: (0..n * dim).map(|_| rng.gen_range(-2.0f32..2.0)).collect(),
            labels: (0..n).map(|_| rng.gen_range(0..classes as u16)).collect(),
        };
        let rows: Vec<usize> = (0..n).collect();
        let mut model = LinearModel::zeros(classes, dim);
        model.weights.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
        model.bias.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
        let grad = model.loss_and_gradient(&data, &rows);
        let params = model.weights.len() + model.bias.len();
        for p in 0..params {
            let nudge = |delta: f64| {
                let mut m = model.clone();
                if p < m.weights.len() {
                    m.weights[p] += delta;
                } else {
                    m.bias[p - model.weights.len()] += delta;
                }
                m.loss(&data, &rows)
            };
            let numeric = (nudge(h) - nudge(-h)) / (2.0 * h);
            let analytic = if p < model.weights.len() { grad.weights[p] } else { grad.bias[p - model.weights.len()] };
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
            if rel > 1e-5 {
                failures += 1;
            }
        }
    }
    outcome(failures == 0, format!("100 instances, worst relative error {worst:.2e}, {failures} failures"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("solver matches grid oracle", criterion_1),
        ("timing constants", criterion_2),
        ("train-or-wait dichotomy and monotonicity", criterion_3),
        ("variance safety on uneven 5-node runs", criterion_4),
        ("directional time-to-accuracy ordering", criterion_5),
        ("saturated bound gives K*H", criterion_6),
        ("byte-identical traces", criterion_7),
        ("gradient check", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.passed {
            failed += 1;
        }
        println!("{} {}: {name} | {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
