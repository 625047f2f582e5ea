//! Independent oracles and instance builders shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use commrestore::scenario::{HouseholdProfile, Params, Scenario, TauSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRID_STEPS: usize = 100;

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn household(id: &str, area: u32, race: u8, demand: f64, tol: u32) -> HouseholdProfile {
    HouseholdProfile {
        id: id.into(),
        area_id: area,
        income_code: 1,
        race_code: race,
        education_code: 1,
        demand_mbps: demand,
        tolerance_days: tol,
        hardship_code: 1,
        perception_code: 1,
    }
}

/// Random instance with at most 3 areas, 2 users per area and 4 slots.
pub fn tiny_instance(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.gen_range(1..=4usize);
    let n_areas = rng.gen_range(1..=3u32);
    let mut hs = Vec::new();
    for area in 1..=n_areas {
        for _ in 0..rng.gen_range(1..=2) {
            let id = format!("u{}", hs.len());
            let race = if rng.gen_bool(0.5) { 1 } else { 3 };
            let demand = rng.gen_range(0.5..8.0);
            let tol = rng.gen_range(1..=horizon as u32);
            hs.push(household(&id, area, race, demand, tol));
        }
    }
    let params = Params {
        horizon,
        smax_mbps: rng.gen_range(2.0..20.0),
        delta: rng.gen_range(0..=3),
        theta: [0.5, 1.0, 2.0][rng.gen_range(0..3)],
        tau_source: TauSource::Race,
    };
    Scenario::new(hs, params).unwrap()
}

/// Exhaustive optimum over serve slots and allocations on the grid
/// `S_max / 100`: each area picks a slot (or none) and an amount, split
/// among its users in grid steps; the last area takes the most it can.
pub fn brute_force_optimum(s: &Scenario) -> f64 {
    let p = &s.params;
    let h = p.smax_mbps / GRID_STEPS as f64;
    let horizon = p.horizon;
    let f = |k: usize, x: f64| {
        let hh = &s.households[k];
        s.tau(k) * logistic(p.theta * (x - hh.demand_mbps))
    };
    // best[n][t][j]: best utility of area n served at t with j grid units
    let best: Vec<Vec<Vec<f64>>> = s
        .areas
        .iter()
        .map(|area| {
            (0..horizon)
                .map(|t| {
                    (0..=GRID_STEPS)
                        .map(|j| {
                            let users = &area.household_ids;
                            let gets = |k: usize, units: usize| {
                                if t < s.households[k].deadline() {
                                    f(k, units as f64 * h)
                                } else {
                                    0.0
                                }
                            };
                            match users.len() {
                                1 => gets(users[0], j),
                                2 => (0..=j)
                                    .map(|i| gets(users[0], i) + gets(users[1], j - i))
                                    .fold(f64::NEG_INFINITY, f64::max),
                                _ => panic!("oracle supports at most two users per area"),
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let n = s.num_areas();
    let mut best_total = 0.0f64;
    let choices = (horizon + 1).pow(n as u32);
    for code in 0..choices {
        let mut slot = vec![None; n];
        let mut c = code;
        for sl in slot.iter_mut() {
            let v = c % (horizon + 1);
            c /= horizon + 1;
            *sl = if v == 0 { None } else { Some(v - 1) };
        }
        let served: Vec<usize> = (0..n).filter(|&a| slot[a].is_some()).collect();
        if served.is_empty() {
            continue;
        }
        let (last, rest) = served.split_last().unwrap();
        let mut units = vec![0usize; n];
        loop {
            // usage per slot by the enumerated areas
            let mut usage = vec![0usize; horizon];
            for &a in rest {
                usage[slot[a].unwrap()] += units[a];
            }
            let window_load = |t: usize| -> usize {
                (t.saturating_sub(p.delta)..=t).map(|tp| usage[tp]).sum()
            };
            let feasible = (0..horizon).all(|t| window_load(t) <= GRID_STEPS);
            if feasible {
                let tl = slot[*last].unwrap();
                let room = (tl..horizon.min(tl + p.delta + 1))
                    .map(|t| GRID_STEPS - window_load(t))
                    .min()
                    .unwrap();
                let value: f64 = rest.iter().map(|&a| best[a][slot[a].unwrap()][units[a]]).sum::<f64>()
                    + best[*last][tl][room];
                best_total = best_total.max(value);
            }
            // next combination of units for the enumerated areas
            let mut i = 0;
            while i < rest.len() {
                units[rest[i]] += 1;
                if units[rest[i]] <= GRID_STEPS {
                    break;
                }
                units[rest[i]] = 0;
                i += 1;
            }
            if i == rest.len() {
                break;
            }
        }
    }
    best_total
}

/// Largest utility change a user can see within one grid step.
pub fn grid_tolerance(s: &Scenario) -> f64 {
    let p = &s.params;
    let h = p.smax_mbps / GRID_STEPS as f64;
    let per_tau = logistic(p.theta * h / 2.0) - logistic(-p.theta * h / 2.0);
    (0..s.num_users()).map(|k| s.tau(k) * per_tau).sum()
}

/// Optimum of `max c.x, A x <= b, lo <= x <= hi` (all bounds finite) by
/// enumerating every basis of `n` tight constraints. `None` when infeasible.
pub fn vertex_enumeration(c: &[f64], rows: &[(Vec<f64>, f64)], bounds: &[(f64, f64)]) -> Option<f64> {
    let n = c.len();
    let mut cons: Vec<(Vec<f64>, f64)> = rows.to_vec();
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cons.push((e.clone(), hi));
        e[j] = -1.0;
        cons.push((e, -lo));
    }
    let feasible = |x: &[f64]| {
        cons.iter()
            .all(|(a, b)| a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>() <= b + 1e-7 * (1.0 + b.abs()))
    };
    let mut best: Option<f64> = None;
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        let mut m: Vec<Vec<f64>> = pick
            .iter()
            .map(|&i| {
                let mut r = cons[i].0.clone();
                r.push(cons[i].1);
                r
            })
            .collect();
        if let Some(x) = gauss_solve(&mut m, n) {
            if feasible(&x) {
                let v: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum();
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
        // next n-subset of cons
        let total = cons.len();
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < total - n + i {
                pick[i] += 1;
                for j in i + 1..n {
                    pick[j] = pick[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Solves the augmented `n x (n+1)` system with partial pivoting.
fn gauss_solve(m: &mut [Vec<f64>], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let p = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[p][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, p);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for k in col..=n {
                    m[r][k] -= f * m[col][k];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

pub fn pearson_longhand(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Rank = (# strictly smaller) + (# equal + 1) / 2.
pub fn ranks_longhand(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_longhand(x: &[f64], y: &[f64]) -> f64 {
    pearson_longhand(&ranks_longhand(x), &ranks_longhand(y))
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Two-tailed Student-t p-value of `r` over `n` pairs by composite Simpson
/// integration of the density on `[0, |t|]`.
pub fn p_value_by_integration(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let t = (r * (df / (1.0 - r * r)).sqrt()).abs();
    let norm = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
    let pdf = |u: f64| norm * (1.0 + u * u / df).powf(-(df + 1.0) / 2.0);
    let steps = 20_000;
    let h = t / steps as f64;
    let mut acc = pdf(0.0) + pdf(t);
    for i in 1..steps {
        acc += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - 2.0 * acc * h / 3.0
}
