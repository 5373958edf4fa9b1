//! Acceptance gate. Every criterion runs at its pinned tolerance and prints
//! one PASS/FAIL line; the test fails if any criterion fails.
//!
//! Run with `cargo test -p sinkdir --test acceptance -- --nocapture` to see
//! the report.

use std::collections::HashMap;
use std::fs;
use std::time::{Duration, Instant};

use sinkdir::cli::{
    execute_single, execute_sweep, load_layout, prepare, simulate, Instance, Simulation, SweepArgs,
    RAPID_BAND, RATIO_FLOOR,
};
use sinkdir::config::RunConfig;
use sinkdir::engine::run;
use sinkdir::metrics::Histogram;
use sinkdir::oracle::shortest_path_tree;
use sinkdir::protocol::{GateMode, ProtocolConfig, Variant};
use sinkdir::topology::{build_listen_graph, degree_stats, place_nodes, CostModelParams};
use sinkdir::RouteCost;

const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Paper-scale runs keyed by (seed, k, f), shared between criteria.
struct Runs {
    cfg: RunConfig,
    instances: HashMap<(u64, usize), Instance>,
    sims: HashMap<(u64, usize, u64), Simulation>,
    min_ratio: f64,
}

impl Runs {
    fn new() -> Self {
        let cfg = RunConfig {
            workers: 1,
            ..RunConfig::default()
        };
        Self {
            cfg,
            instances: HashMap::new(),
            sims: HashMap::new(),
            min_ratio: f64::INFINITY,
        }
    }

    fn get(&mut self, seed: u64, k: usize, f: f64) -> &Simulation {
        let key = (seed, k, f.to_bits());
        if !self.sims.contains_key(&key) {
            let cfg = &self.cfg;
            let instance = self
                .instances
                .entry((seed, k))
                .or_insert_with(|| prepare(cfg, load_layout(cfg, seed).unwrap(), k).unwrap());
            let protocol = ProtocolConfig {
                f,
                ..cfg.protocol()
            };
            let sim = simulate(instance, &protocol, seed, cfg.horizon).unwrap();
            self.min_ratio = self.min_ratio.min(sim.stats.min_cost_ratio);
            self.sims.insert(key, sim);
        }
        &self.sims[&key]
    }
}

fn side_for(n: usize) -> f64 {
    4000.0 * (n as f64 / 4000.0).sqrt()
}

fn c1_oracle_equivalence() -> Verdict {
    let started = Instant::now();
    let mut instances: Vec<(usize, usize, u64)> = Vec::new();
    for &n in &[50, 200, 500] {
        for &k in &[8, 16] {
            for seed in 1..=3 {
                instances.push((n, k, seed));
            }
        }
    }
    instances.extend([(500, 8, 4), (500, 16, 4)]);
    let mut worst: f64 = 0.0;
    for &(n, k, seed) in &instances {
        let pts = place_nodes(n, side_for(n), seed);
        let g = build_listen_graph(&pts, 300.0, k, &CostModelParams::default(), 0).unwrap();
        let tree = shortest_path_tree(&g);
        let r = run(&g, &ProtocolConfig::baseline(), seed).unwrap();
        for (est, opt) in r.estimates().iter().zip(&tree.cost) {
            match (est, opt) {
                (RouteCost::Finite(a), RouteCost::Finite(b)) => {
                    let rel = if *b == 0.0 {
                        (a - b).abs()
                    } else {
                        (a - b).abs() / b
                    };
                    worst = worst.max(rel);
                }
                (RouteCost::Unreached, RouteCost::Unreached) => {}
                _ => return Err(format!("reachability mismatch on n={n} k={k} seed={seed}")),
            }
        }
    }
    let elapsed = started.elapsed();
    check(
        worst <= 1e-12 && elapsed < Duration::from_secs(10),
        format!(
            "{} instances, worst relative error {worst:e}, {:.2} s",
            instances.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn c2_degree() -> Verdict {
    let cfg = RunConfig::default();
    let means: Vec<f64> = (1..=5)
        .map(|seed| {
            let pts = place_nodes(cfg.n, cfg.side, seed);
            degree_stats(&pts, cfg.side, cfg.range)
                .unwrap()
                .mean_interior
        })
        .collect();
    let ok = means.iter().all(|m| (m - 70.0).abs() <= 7.0);
    check(ok, format!("interior mean degree per seed {means:.2?}"))
}

fn c3_rapid_traffic(runs: &mut Runs) -> Verdict {
    let mut per_seed = Vec::new();
    let mut pooled = Histogram::integer_bins(200);
    let mut total = 0.0;
    for seed in DEFAULT_SEEDS {
        let sim = runs.get(seed, 8, 1.1);
        per_seed.push(sim.stats.mean_messages);
        total += sim.stats.mean_messages;
        for s in sim
            .result
            .final_states
            .iter()
            .filter(|s| s.estimate.is_finite())
        {
            pooled.add(s.messages_sent as f64);
        }
    }
    let mean = total / DEFAULT_SEEDS.len() as f64;
    let mode = pooled.mode().unwrap_or(-1.0);
    check(
        (RAPID_BAND.0..=RAPID_BAND.1).contains(&mean) && (2.0..=4.0).contains(&mode),
        format!("mean over seeds {mean:.3} (per seed {per_seed:.3?}), pooled mode {mode}"),
    )
}

fn c4_comprehensive_traffic(runs: &mut Runs) -> Verdict {
    let means: Vec<f64> = DEFAULT_SEEDS
        .iter()
        .map(|&s| runs.get(s, 32, 1.0).stats.mean_messages)
        .collect();
    check(
        means.iter().all(|m| (m - 30.0).abs() <= 0.3 * 30.0),
        format!("mean messages per node per seed {means:.2?} (band 21..39)"),
    )
}

fn c5_threshold_trend(runs: &mut Runs) -> Verdict {
    let mut detail = Vec::new();
    let mut ok = true;
    for seed in DEFAULT_SEEDS {
        let at12 = runs.get(seed, 8, 1.2).stats.mean_messages;
        let at10 = runs.get(seed, 8, 1.0).stats.mean_messages;
        ok &= at12 <= 3.0 && at12 <= 0.5 * at10;
        detail.push(format!("seed {seed}: f=1.2 {at12:.3} vs f=1.0 {at10:.3}"));
    }
    check(ok, detail.join("; "))
}

fn c6_suboptimality(runs: &mut Runs) -> Verdict {
    let rapid = runs.get(1, 8, 1.1).stats.mean_cost_ratio;
    let exact = runs.get(1, 8, 1.0).stats.mean_cost_ratio;
    let floor = runs.min_ratio;
    check(
        floor >= RATIO_FLOOR && rapid > exact,
        format!(
            "min ratio over {} runs {floor:.15}; mean ratio f=1.1 {rapid:.4} vs f=1.0 {exact:.4}",
            runs.sims.len()
        ),
    )
}

fn c7_hops(runs: &mut Runs) -> Verdict {
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in DEFAULT_SEEDS {
        let rapid = runs.get(seed, 8, 1.1).stats.mean_hops;
        let comp = runs.get(seed, 32, 1.0).stats.mean_hops;
        if rapid <= comp {
            wins += 1;
        }
        detail.push(format!("seed {seed}: {rapid:.2} vs {comp:.2}"));
    }
    check(
        wins >= 2,
        format!(
            "{wins}/3 seeds rapid <= comprehensive ({})",
            detail.join("; ")
        ),
    )
}

fn c8_time_sync() -> Verdict {
    let mut ok = true;
    let mut messages = 0u64;
    for i in 0..10u64 {
        let n = 20 + (i as usize * 20);
        let pts = place_nodes(n, side_for(n), 500 + i);
        let g = build_listen_graph(&pts, 300.0, 8, &CostModelParams::default(), 0).unwrap();
        let tree = shortest_path_tree(&g);
        let cfg = ProtocolConfig {
            variant: Variant::TimeSync,
            ..ProtocolConfig::default()
        };
        let r = run(&g, &cfg, i).unwrap();
        let expected_v = g.min_positive_cost().unwrap() / (cfg.delay_max + 1) as f64;
        ok &= r.velocity == Some(expected_v);
        ok &= r.estimates() == tree.cost;
        ok &= r
            .final_states
            .iter()
            .all(|s| s.messages_sent == u32::from(s.estimate.is_finite()));
        messages += r.total_messages;
    }
    check(
        ok,
        format!("10 instances, n = 20..200, {messages} messages total, one per reached node"),
    )
}

fn c9_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out: tmp.path().to_path_buf(),
        workers: 1,
        ..RunConfig::default()
    };
    let snapshot = |dir: &std::path::Path| -> Vec<(std::ffi::OsString, Vec<u8>)> {
        let mut files: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let first_dir = execute_single(&cfg).unwrap().dir;
    let first = snapshot(&first_dir);
    fs::remove_dir_all(&first_dir).unwrap();
    let second_dir = execute_single(&cfg).unwrap().dir;
    let second = snapshot(&second_dir);
    if first_dir != second_dir {
        return Err("output directory changed between executions".into());
    }
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        if a != b {
            return Err(format!("{} differs", name.to_string_lossy()));
        }
    }
    check(
        first.len() == second.len() && first.len() >= 10,
        format!(
            "{} output files byte-identical across two executions",
            first.len()
        ),
    )
}

fn c10_performance() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out: tmp.path().to_path_buf(),
        workers: 1,
        ..RunConfig::default()
    };
    let out = execute_single(&cfg).unwrap();
    let protocol = out.protocol_time.as_secs_f64();
    check(
        out.total_time < Duration::from_secs(60),
        format!(
            "full rapid run {:.3} s (limit 60 s); protocol phase {protocol:.3} s (target 4 s{})",
            out.total_time.as_secs_f64(),
            if protocol < 4.0 { ", met" } else { ", missed" }
        ),
    )
}

fn c11_gate_mode_arbitration() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out: tmp.path().to_path_buf(),
        workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        ..RunConfig::default()
    };
    let args = SweepArgs {
        f_list: Some(vec![1.0, 1.1, 1.2]),
        k_list: Some(vec![8, 32]),
        seeds: Some(vec![1]),
        compare_gate_modes: true,
    };
    let out = execute_sweep(&cfg, &args).unwrap();
    let text = out.arbitration.unwrap_or_default();
    let modes: Vec<GateMode> = out
        .tables
        .iter()
        .flat_map(|t| t.rows.first().map(|r| r.gate_mode))
        .collect();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    check(
        modes.len() == 2 && text.contains("result:"),
        body.join(" | "),
    )
}

#[test]
fn acceptance_criteria() {
    let mut runs = Runs::new();
    let results: Vec<(&str, Verdict)> = vec![
        ("1 oracle equivalence", c1_oracle_equivalence()),
        ("2 degree reproduction", c2_degree()),
        ("3 rapid method traffic", c3_rapid_traffic(&mut runs)),
        (
            "4 comprehensive method traffic",
            c4_comprehensive_traffic(&mut runs),
        ),
        ("5 threshold trend", c5_threshold_trend(&mut runs)),
        ("7 hop comparison", c7_hops(&mut runs)),
        ("6 suboptimality direction", c6_suboptimality(&mut runs)),
        ("8 time-sync single message", c8_time_sync()),
        ("9 determinism", c9_determinism()),
        ("10 performance", c10_performance()),
        ("11 gate-mode arbitration", c11_gate_mode_arbitration()),
    ];
    let mut failed = Vec::new();
    for (name, verdict) in &results {
        match verdict {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                println!("FAIL  criterion {name}: {detail}");
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
