//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use commrestore::benchmark::{solve_benchmark, BenchmarkConfig};
use commrestore::bnb::solve_bnb;
use commrestore::envelope::build_envelope;
use commrestore::heuristic::solve_heuristic;
use commrestore::lp::{relaxation_upper_bound, solve_lp, LpProblem, LpStatus};
use commrestore::report::metrics_report;
use commrestore::scenario::{
    generate_scenario, Attribute, GeneratorConfig, Marginals, Params, Scenario, TauSource,
};
use commrestore::stats::{correlation_table, pearson, spearman, Method};
use commrestore::utility::{validate_feasibility, weighted_sigmoid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct TinyRun {
    seed: u64,
    brute: f64,
    tol: f64,
    bnb: f64,
    heuristic: f64,
    ub: f64,
}

fn tiny_suite() -> (Vec<TinyRun>, f64) {
    let start = Instant::now();
    let runs = (0..50)
        .map(|seed| {
            let s = common::tiny_instance(seed);
            let brute = common::brute_force_optimum(&s);
            let tol = common::grid_tolerance(&s);
            let ub = relaxation_upper_bound(&s).unwrap();
            let alpha = (0.5 * tol / ub).clamp(1e-6, 0.15);
            let bnb = solve_bnb(&s, alpha, 100_000).unwrap().lower_bound;
            let heuristic = solve_heuristic(&s).unwrap().true_objective;
            TinyRun {
                seed,
                brute,
                tol,
                bnb,
                heuristic,
                ub,
            }
        })
        .collect();
    (runs, start.elapsed().as_secs_f64())
}

fn oracle_optimality(runs: &[TinyRun], secs: f64) -> Outcome {
    let bad: Vec<u64> = runs
        .iter()
        .filter(|r| (r.bnb - r.brute).abs() > r.tol)
        .map(|r| r.seed)
        .collect();
    let ok = bad.is_empty() && secs <= 60.0;
    (ok, format!("{} instances, mismatches {bad:?}, {secs:.2} s", runs.len()))
}

fn heuristic_gap(runs: &[TinyRun]) -> Outcome {
    let mut below = Vec::new();
    let mut above_ub = Vec::new();
    for r in runs {
        if r.heuristic < 0.85 * r.brute {
            below.push(format!("seed {} at {:.1}%", r.seed, 100.0 * r.heuristic / r.brute));
        }
        if r.heuristic > r.ub * (1.0 + 1e-9) + 1e-9 {
            above_ub.push(r.seed);
        }
    }
    let good = runs.len() - below.len();
    let ok = good as f64 >= 0.9 * runs.len() as f64 && above_ub.is_empty();
    (
        ok,
        format!(
            "{good}/{} at >= 85% of optimum, below: [{}], above bound: {above_ub:?}",
            runs.len(),
            below.join(", ")
        ),
    )
}

fn fuzzed_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.gen_range(1..=15);
    let params = Params {
        horizon,
        smax_mbps: rng.gen_range(50.0..20_000.0),
        delta: rng.gen_range(0..=3),
        theta: [0.05, 1.0, 10.0][rng.gen_range(0..3)],
        tau_source: [TauSource::Race, TauSource::Income, TauSource::Education][rng.gen_range(0..3)],
    };
    let marginals = if rng.gen_bool(0.5) {
        Marginals::uniform(horizon)
    } else {
        Marginals::survey_like(horizon)
    };
    let config = GeneratorConfig::new(seed, rng.gen_range(1..=20), (1, rng.gen_range(1..=5)), marginals);
    generate_scenario(&config, params).unwrap()
}

fn feasibility_suite() -> Outcome {
    let mut failures = Vec::new();
    for seed in 0..1000 {
        let s = fuzzed_scenario(seed);
        let trace = solve_heuristic(&s).unwrap();
        let h = validate_feasibility(&s, &trace.final_plan);
        let bench = solve_benchmark(&s, &BenchmarkConfig::default()).unwrap();
        let b = validate_feasibility(&s, &bench.to_allocation_plan(&s));
        let resolves = trace.iterations.len();
        if !h.is_empty() || !b.is_empty() || resolves > s.num_areas() * s.horizon() {
            failures.push(format!(
                "seed {seed}: {} heuristic / {} benchmark violations, {resolves} LP solves",
                h.len(),
                b.len()
            ));
        }
    }
    (failures.is_empty(), format!("1000 scenarios, failures: {failures:?}"))
}

fn max_deviation(tau: f64, r_hat: f64, theta: f64, s_max: f64) -> f64 {
    let e = build_envelope(tau, r_hat, theta, s_max).unwrap();
    (0..=1000)
        .map(|i| {
            let x = s_max * i as f64 / 1000.0;
            e.value(x) - weighted_sigmoid(tau, r_hat, theta, x)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn envelope_domination() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut below, mut nonconcave) = (0usize, 0usize);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let tau = rng.gen_range(0.5..7.0);
        let r_hat = 10f64.powf(rng.gen_range(-0.3..3.0));
        let theta = 10f64.powf(rng.gen_range(-2.0..1.7));
        let s_max = r_hat * rng.gen_range(0.2..10.0);
        let e = build_envelope(tau, r_hat, theta, s_max).unwrap();
        let grid: Vec<f64> = (0..1000).map(|i| s_max * i as f64 / 999.0).collect();
        for &x in &grid {
            let slack = e.value(x) - weighted_sigmoid(tau, r_hat, theta, x);
            worst = worst.min(slack);
            if slack < -1e-9 {
                below += 1;
            }
        }
        for _ in 0..20 {
            let (x, y) = (grid[rng.gen_range(0..1000)], grid[rng.gen_range(0..1000)]);
            if e.value(0.5 * (x + y)) < 0.5 * (e.value(x) + e.value(y)) - 1e-12 * tau {
                nonconcave += 1;
            }
        }
    }
    let mut increasing = 0;
    let mut example = String::new();
    for _ in 0..100 {
        let tau = rng.gen_range(0.5..7.0);
        let r_hat = rng.gen_range(1.0..50.0);
        let devs: Vec<f64> = [1.0, 5.0, 10.0, 50.0]
            .iter()
            .map(|&theta| max_deviation(tau, r_hat, theta, 4.0 * r_hat))
            .collect();
        if devs.windows(2).any(|w| w[1] > w[0] + 1e-12) {
            increasing += 1;
            if example.is_empty() {
                example = format!("tau {tau:.2}, r_hat {r_hat:.2}: {devs:.3?}");
            }
        }
    }
    let ok = below == 0 && nonconcave == 0 && increasing == 0;
    (
        ok,
        format!(
            "below sigmoid {below} (min slack {worst:.2e}), concavity failures {nonconcave}, \
             deviation rising in theta for {increasing}/100 pairs (e.g. {example})"
        ),
    )
}

fn lp_engine() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = Vec::new();
    let mut nondeterministic = 0;
    for case in 0..200 {
        let n = rng.gen_range(1..=8);
        let m = rng.gen_range(1..=5);
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let bounds: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let lo = rng.gen_range(-5.0..1.0);
                (lo, lo + rng.gen_range(0.5..10.0))
            })
            .collect();
        let rows: Vec<(Vec<f64>, f64)> = (0..m)
            .map(|_| {
                let a = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
                (a, rng.gen_range(-4.0..10.0))
            })
            .collect();
        let mut p = LpProblem::new(0);
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            p.add_var(c[j], lo, hi);
        }
        for (a, b) in &rows {
            p.add_row(a.iter().copied().enumerate().collect(), *b);
        }
        let first = solve_lp(&p);
        for _ in 0..4 {
            let again = solve_lp(&p);
            if again.objective_value.to_bits() != first.objective_value.to_bits()
                || again.x_values.iter().map(|v| v.to_bits()).ne(first.x_values.iter().map(|v| v.to_bits()))
            {
                nondeterministic += 1;
            }
        }
        match common::vertex_enumeration(&c, &rows, &bounds) {
            Some(v) if first.status != LpStatus::Optimal || (first.objective_value - v).abs() > 1e-6 * (1.0 + v.abs()) => {
                mismatches.push(format!("case {case}: oracle {v}, solver {:?} {}", first.status, first.objective_value))
            }
            None if first.status != LpStatus::Infeasible => {
                mismatches.push(format!("case {case}: oracle infeasible, solver {:?}", first.status))
            }
            _ => {}
        }
    }
    let ok = mismatches.is_empty() && nondeterministic == 0;
    (
        ok,
        format!("200 LPs, mismatches {mismatches:?}, nondeterministic re-solves {nondeterministic}"),
    )
}

/// Paired areas: each holds one race-1 and one race-3 household with the
/// same demand and tolerance.
fn paired_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.gen_range(2..=6);
    let mut hs = Vec::new();
    let mut total = 0.0;
    for area in 1..=rng.gen_range(2..=6u32) {
        let demand = rng.gen_range(1.0..20.0);
        let tol = rng.gen_range(1..=horizon as u32);
        for race in [1, 3] {
            let id = format!("h{}", hs.len());
            hs.push(common::household(&id, area, race, demand, tol));
            total += demand;
        }
    }
    let params = Params {
        horizon,
        smax_mbps: total * rng.gen_range(0.2..0.7),
        delta: rng.gen_range(0..=2),
        theta: [0.5, 1.0, 5.0][rng.gen_range(0..3)],
        tau_source: TauSource::Race,
    };
    Scenario::new(hs, params).unwrap()
}

fn prioritization() -> Outcome {
    let mut inverted = Vec::new();
    let mut bound_drops = Vec::new();
    for seed in 0..20 {
        let s = paired_scenario(seed);
        let plan = solve_heuristic(&s).unwrap().final_plan;
        let groups = metrics_report(&s, &plan, Attribute::Race, None).per_group;
        let frac = |v: f64| groups.iter().find(|g| g.value == v).unwrap().satisfied_fraction;
        if frac(3.0) < frac(1.0) {
            inverted.push(format!("seed {seed}: {} < {}", frac(3.0), frac(1.0)));
        }
        let ub = relaxation_upper_bound(&s).unwrap();
        for k in (0..s.num_users()).filter(|&k| s.households[k].race_code == 1) {
            let mut hs = s.households.clone();
            hs[k].race_code = 3;
            let raised = relaxation_upper_bound(&Scenario::new(hs, s.params).unwrap()).unwrap();
            if raised < ub - 1e-9 * (1.0 + ub) {
                bound_drops.push(format!("seed {seed} user {k}: {ub} -> {raised}"));
            }
        }
    }
    let ok = inverted.is_empty() && bound_drops.is_empty();
    (ok, format!("20 scenarios, inversions {inverted:?}, bound decreases {bound_drops:?}"))
}

fn benchmark_behavior() -> Outcome {
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let config = GeneratorConfig::new(seed, rng.gen_range(3..=12), (1, 5), Marginals::survey_like(15));
        let s = generate_scenario(&config, Params::default()).unwrap();
        let critical: f64 = s.households.iter().filter(|h| h.demand_mbps == 1.0).map(|h| h.demand_mbps).sum();
        let params = Params {
            smax_mbps: critical.max(1.0) * rng.gen_range(1.0..3.0),
            ..s.params
        };
        let s = s.with_params(params).unwrap();
        let plan = solve_benchmark(&s, &BenchmarkConfig::default()).unwrap();
        for (k, h) in s.households.iter().enumerate() {
            if h.demand_mbps != 1.0 {
                continue;
            }
            let covered = plan.serve_slot(s.area_of(k)).is_some_and(|t| t < h.deadline());
            if !covered || plan.s_user[k] < h.demand_mbps - 1e-9 {
                failures.push(format!("seed {seed}: critical user {} not served", h.id));
            }
        }
        for source in [TauSource::Income, TauSource::Education] {
            let other = s.with_params(Params { tau_source: source, ..s.params }).unwrap();
            if solve_benchmark(&other, &BenchmarkConfig::default()).unwrap() != plan {
                failures.push(format!("seed {seed}: plan changes under {source:?} weights"));
            }
        }
    }
    (failures.is_empty(), format!("20 scenarios, failures {failures:?}"))
}

fn temporal_skew() -> Outcome {
    let mut late = Vec::new();
    for seed in 0..20u64 {
        let config = GeneratorConfig::new(seed, 8, (1, 5), Marginals::survey_like(15));
        let s = generate_scenario(&config, Params::default()).unwrap();
        let mut hs = s.households.clone();
        for h in &mut hs {
            h.tolerance_days = h.tolerance_days.clamp(1, 5);
        }
        let s = Scenario::new(hs, s.params).unwrap();
        let plan = solve_heuristic(&s).unwrap().final_plan;
        for (n, slot) in plan.serve_slots().iter().enumerate() {
            if let Some(t) = slot {
                if t + 1 > 5 {
                    late.push(format!("seed {seed} area {n} slot {}", t + 1));
                }
            }
        }
    }
    (late.is_empty(), format!("20 scenarios with T = 15, late serves {late:?}"))
}

fn statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_r: f64 = 0.0;
    let mut worst_p: f64 = 0.0;
    let mut skipped = 0;
    for _ in 0..100 {
        let n = rng.gen_range(5..80);
        let tied = rng.gen_bool(0.5);
        let draw = |rng: &mut ChaCha8Rng| {
            if tied {
                f64::from(rng.gen_range(1..=5))
            } else {
                rng.gen_range(-10.0..10.0)
            }
        };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + draw(&mut rng)).collect();
        let (Ok(p), Ok(s)) = (pearson(&x, &y), spearman(&x, &y)) else {
            skipped += 1;
            continue;
        };
        worst_r = worst_r
            .max((p.0 - common::pearson_longhand(&x, &y)).abs())
            .max((s.0 - common::spearman_longhand(&x, &y)).abs());
        worst_p = worst_p
            .max((p.1 - common::p_value_by_integration(p.0, n)).abs())
            .max((s.1 - common::p_value_by_integration(s.0, n)).abs());
    }
    let mut config = GeneratorConfig::new(11, 92, (5, 5), Marginals::survey_like(15));
    config.hardship_link = 0.6;
    config.tolerance_link = 0.6;
    let s = generate_scenario(&config, Params::default()).unwrap();
    let table = correlation_table(&s, &[Attribute::Hardship, Attribute::Tolerance], &[
        Attribute::Income,
        Attribute::Education,
        Attribute::Race,
    ]);
    let mut pattern_failures = Vec::new();
    for e in &table.pairs {
        let want_positive = e.row == Attribute::Hardship;
        match e.result {
            Ok((r, p)) if (r > 0.0) == want_positive && p < 0.05 => {}
            _ => pattern_failures.push(format!("{} {}/{}: {:?}", e.method.name(), e.row, e.col, e.result)),
        }
    }
    let ok = worst_r <= 1e-10 && worst_p <= 1e-8 && skipped == 0 && pattern_failures.is_empty() && s.num_users() == 460;
    let rho = table.get(Method::Spearman, Attribute::Hardship, Attribute::Income).unwrap();
    (
        ok,
        format!(
            "coefficient error {worst_r:.1e}, p-value error {worst_p:.1e}, n = {}, hardship/income rho {:?}, \
             sign failures {pattern_failures:?}",
            s.num_users(),
            rho.result
        ),
    )
}

fn run_sequence(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let bin = env!("CARGO_BIN_EXE_commrestore");
    let steps: [&[&str]; 5] = [
        &["--seed", "5", "generate", "--areas", "6", "--out", "gen.csv"],
        &["solve", "--scenario", "gen.csv", "--plan-out", "plan.csv", "--users-out", "users.csv", "--groups-out", "groups.csv", "--trace-out", "trace.csv"],
        &["--format", "json", "solve", "--scenario", "gen.csv"],
        &["bound", "--scenario", "gen.csv", "--progress-out", "progress.csv", "--plan-out", "bnb.csv"],
        &["benchmark", "--scenario", "gen.csv", "--plan-out", "bench.csv", "--users-out", "bench_users.csv"],
    ];
    let mut outputs = Vec::new();
    for (i, args) in steps.iter().enumerate() {
        let out = Command::new(bin).args(*args).current_dir(dir).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        outputs.push((format!("stdout {i}"), out.stdout));
    }
    let mut files: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    for f in files {
        outputs.push((f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&f).unwrap()));
    }
    outputs
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_sequence(a.path());
    let second = run_sequence(b.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let ok = first.len() == second.len() && differing.is_empty();
    (ok, format!("{} outputs compared, differing {differing:?}", first.len()))
}

fn main() {
    let (runs, secs) = tiny_suite();
    let criteria: Vec<(&str, Check)> = vec![
        ("oracle optimality", Box::new(|| oracle_optimality(&runs, secs))),
        ("heuristic gap", Box::new(|| heuristic_gap(&runs))),
        ("feasibility suite", Box::new(feasibility_suite)),
        ("envelope domination", Box::new(envelope_domination)),
        ("lp engine", Box::new(lp_engine)),
        ("prioritization", Box::new(prioritization)),
        ("benchmark behavior", Box::new(benchmark_behavior)),
        ("temporal skew", Box::new(temporal_skew)),
        ("statistics", Box::new(statistics)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = check();
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name} ({:.1} s): {detail}",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
