//! The admission benchmark: serve as many users as possible before their
//! deadlines, giving each served user a guaranteed fraction of its demand,
//! then spread the leftover capacity evenly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpProblem, LpStatus};
use crate::scenario::Scenario;
use crate::utility::{capacity_tolerance, AllocationPlan};

const INTEGRALITY_TOL: f64 = 1e-9;

/// Fraction of demand guaranteed to a user, by demand level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiRule {
    /// `(demand_mbps, phi)` pairs matched exactly.
    pub classes: Vec<(f64, f64)>,
    pub default_phi: f64,
}

impl Default for PhiRule {
    /// Full service for the 1 Mbps "communicate with family" class only.
    fn default() -> Self {
        PhiRule {
            classes: vec![(1.0, 1.0)],
            default_phi: 0.0,
        }
    }
}

impl PhiRule {
    pub fn phi(&self, demand_mbps: f64) -> f64 {
        self.classes
            .iter()
            .find(|(d, _)| *d == demand_mbps)
            .map_or(self.default_phi, |(_, p)| *p)
    }

    pub fn uniform(phi: f64) -> Self {
        PhiRule {
            classes: vec![],
            default_phi: phi,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.default_phi) || self.classes.iter().any(|&(_, p)| !ok(p)) {
            return Err(Error::Argument("phi values must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Redistribution {
    /// Equal increments to every user in a served area.
    Global,
    /// Equal increments per served area, split equally among its users.
    PerArea,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkConfig {
    pub phi_rule: PhiRule,
    /// Every user with a positive guarantee must be served by its deadline.
    pub strict: bool,
    pub node_limit: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            phi_rule: PhiRule::default(),
            strict: false,
            node_limit: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkPlan {
    /// `z[n][t]`
    pub z: Vec<Vec<bool>>,
    /// Per-user allocated rate.
    pub s_user: Vec<f64>,
    pub served_count: usize,
    /// `false` when the node limit stopped the search early.
    pub optimal: bool,
}

impl BenchmarkPlan {
    pub fn serve_slot(&self, n: usize) -> Option<usize> {
        self.z[n].iter().position(|&on| on)
    }

    /// Same plan as shares of per-area totals; areas with zero total split
    /// equally.
    pub fn to_allocation_plan(&self, scenario: &Scenario) -> AllocationPlan {
        let mut s = vec![0.0; scenario.num_areas()];
        for (k, v) in self.s_user.iter().enumerate() {
            s[scenario.area_of(k)] += v;
        }
        let w = (0..scenario.num_users())
            .map(|k| {
                let n = scenario.area_of(k);
                if self.serve_slot(n).is_none() {
                    0.0
                } else if s[n] > 0.0 {
                    self.s_user[k] / s[n]
                } else {
                    1.0 / scenario.areas[n].household_ids.len() as f64
                }
            })
            .collect();
        AllocationPlan::new(scenario, self.z.clone(), s, w)
    }
}

/// Served-user count and guaranteed load of each (area, slot) candidate.
struct Candidates {
    /// `(area, slot, users_covered, load_mbps)`
    items: Vec<(usize, usize, f64, f64)>,
    requirement: Vec<f64>,
}

fn candidates(scenario: &Scenario, rule: &PhiRule) -> Candidates {
    let requirement: Vec<f64> = scenario
        .households
        .iter()
        .map(|h| h.demand_mbps * rule.phi(h.demand_mbps))
        .collect();
    let mut items = Vec::new();
    for (n, area) in scenario.areas.iter().enumerate() {
        for t in 0..scenario.horizon() {
            let covered: Vec<usize> = area
                .household_ids
                .iter()
                .copied()
                .filter(|&k| t < scenario.households[k].deadline())
                .collect();
            if covered.is_empty() {
                continue;
            }
            let load = covered.iter().map(|&k| requirement[k]).sum();
            items.push((n, t, covered.len() as f64, load));
        }
    }
    Candidates { items, requirement }
}

fn relaxation(scenario: &Scenario, cand: &Candidates, strict: bool, fixed: &[(f64, f64)]) -> LpProblem {
    let mut p = LpProblem::new(0);
    for (j, &(_, _, count, _)) in cand.items.iter().enumerate() {
        p.add_var(count, fixed[j].0, fixed[j].1);
    }
    for n in 0..scenario.num_areas() {
        let coeffs: Vec<(usize, f64)> = cand
            .items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.0 == n)
            .map(|(j, _)| (j, 1.0))
            .collect();
        if !coeffs.is_empty() {
            p.add_row(coeffs, 1.0);
        }
    }
    for t in 0..scenario.horizon() {
        let window = scenario.window(t);
        let coeffs: Vec<(usize, f64)> = cand
            .items
            .iter()
            .enumerate()
            .filter(|(_, it)| window.contains(&it.1) && it.3 > 0.0)
            .map(|(j, it)| (j, it.3))
            .collect();
        if !coeffs.is_empty() {
            p.add_row(coeffs, scenario.params.smax_mbps);
        }
    }
    if strict {
        for (k, h) in scenario.households.iter().enumerate() {
            if cand.requirement[k] <= 0.0 {
                continue;
            }
            let n = scenario.area_of(k);
            let coeffs = cand
                .items
                .iter()
                .enumerate()
                .filter(|(_, it)| it.0 == n && it.1 < h.deadline())
                .map(|(j, _)| (j, -1.0))
                .collect();
            p.add_row(coeffs, -1.0);
        }
    }
    p
}

struct BoNode {
    id: u64,
    bound: f64,
    fixed: Vec<(f64, f64)>,
    z: Vec<f64>,
}

impl PartialEq for BoNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for BoNode {}

impl PartialOrd for BoNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for BoNode {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound).then_with(|| other.id.cmp(&self.id))
    }
}

/// Picks the first served slot per area from a 0/1 vector.
fn selection(cand: &Candidates, z: &[f64], num_areas: usize) -> Vec<Option<usize>> {
    let mut serve = vec![None; num_areas];
    for (j, &(n, t, _, _)) in cand.items.iter().enumerate() {
        if z[j] > 0.5 && serve[n].is_none() {
            serve[n] = Some(t);
        }
    }
    serve
}

fn count_of(cand: &Candidates, serve: &[Option<usize>]) -> usize {
    cand.items
        .iter()
        .filter(|(n, t, _, _)| serve[*n] == Some(*t))
        .map(|it| it.2 as usize)
        .sum()
}

/// Largest count found by branch and bound on the serve indicators, or
/// `None` when no integral schedule satisfies the constraints.
fn branch_and_bound(
    scenario: &Scenario,
    cand: &Candidates,
    strict: bool,
    node_limit: usize,
) -> (Option<Vec<Option<usize>>>, bool) {
    let mut best: Option<(Vec<Option<usize>>, usize)> = None;
    if !strict {
        best = Some((vec![None; scenario.num_areas()], 0));
    }
    let evaluate = |fixed: Vec<(f64, f64)>, id: u64| -> Option<BoNode> {
        let sol = solve_lp(&relaxation(scenario, cand, strict, &fixed));
        (sol.status == LpStatus::Optimal).then_some(BoNode {
            id,
            bound: sol.objective_value,
            fixed,
            z: sol.x_values,
        })
    };
    let mut next_id = 0;
    let mut heap = BinaryHeap::new();
    let root = vec![(0.0, 1.0); cand.items.len()];
    heap.extend(evaluate(root, next_id));
    next_id += 1;
    let mut explored = 1;
    let mut complete = true;
    while let Some(node) = heap.pop() {
        let incumbent = best.as_ref().map_or(-1.0, |b| b.1 as f64);
        if (node.bound + INTEGRALITY_TOL).floor() <= incumbent {
            continue;
        }
        let fractional = node
            .z
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > INTEGRALITY_TOL && v < 1.0 - INTEGRALITY_TOL)
            .min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()).then(a.0.cmp(&b.0)))
            .map(|(j, _)| j);
        let Some(j) = fractional else {
            let serve = selection(cand, &node.z, scenario.num_areas());
            let count = count_of(cand, &serve);
            if best.as_ref().is_none_or(|b| count > b.1) {
                best = Some((serve, count));
            }
            continue;
        };
        if explored >= node_limit {
            complete = false;
            break;
        }
        for value in [1.0, 0.0] {
            let mut fixed = node.fixed.clone();
            fixed[j] = (value, value);
            if let Some(child) = evaluate(fixed, next_id) {
                heap.push(child);
            }
            next_id += 1;
            explored += 1;
        }
    }
    (best.map(|(serve, _)| serve), complete)
}

pub fn solve_benchmark(scenario: &Scenario, config: &BenchmarkConfig) -> Result<BenchmarkPlan> {
    config.phi_rule.validate()?;
    let cand = candidates(scenario, &config.phi_rule);
    let (found, optimal) = branch_and_bound(scenario, &cand, config.strict, config.node_limit);
    let Some(serve) = found else {
        if !optimal {
            return Err(Error::Solver("node limit reached before any admissible schedule".into()));
        }
        // the conditional schedule shows which guaranteed users cannot be fitted
        let loose = branch_and_bound(scenario, &cand, false, config.node_limit)
            .0
            .expect("the empty schedule is always feasible");
        let mut blocking: Vec<String> = scenario
            .households
            .iter()
            .enumerate()
            .filter(|(k, h)| {
                cand.requirement[*k] > 0.0 && loose[scenario.area_of(*k)].is_none_or(|t| t >= h.deadline())
            })
            .map(|(_, h)| h.id.clone())
            .collect();
        if blocking.is_empty() {
            blocking = scenario
                .households
                .iter()
                .enumerate()
                .filter(|(k, _)| cand.requirement[*k] > 0.0)
                .map(|(_, h)| h.id.clone())
                .collect();
        }
        return Err(Error::BenchmarkInfeasible { blocking });
    };
    let horizon = scenario.horizon();
    let z = serve
        .iter()
        .map(|slot| (0..horizon).map(|t| *slot == Some(t)).collect())
        .collect();
    let s_user = scenario
        .households
        .iter()
        .enumerate()
        .map(|(k, h)| match serve[scenario.area_of(k)] {
            Some(t) if t < h.deadline() => cand.requirement[k],
            _ => 0.0,
        })
        .collect();
    Ok(BenchmarkPlan {
        served_count: count_of(&cand, &serve),
        z,
        s_user,
        optimal,
    })
}

/// Progressive filling of leftover window capacity: all users of served
/// areas grow at equal rates (per user or per area) until a window they use
/// is full, at which point they stop.
pub fn redistribute_surplus(scenario: &Scenario, plan: &BenchmarkPlan, mode: Redistribution) -> BenchmarkPlan {
    let horizon = scenario.horizon();
    let smax = scenario.params.smax_mbps;
    let tol = capacity_tolerance(smax);
    let slot_of: Vec<Option<usize>> = (0..scenario.num_users())
        .map(|k| plan.serve_slot(scenario.area_of(k)))
        .collect();
    let weight: Vec<f64> = (0..scenario.num_users())
        .map(|k| match mode {
            Redistribution::Global => 1.0,
            Redistribution::PerArea => 1.0 / scenario.areas[scenario.area_of(k)].household_ids.len() as f64,
        })
        .collect();
    let mut s_user = plan.s_user.clone();
    let mut active: Vec<bool> = slot_of.iter().map(Option::is_some).collect();
    let usage = |s_user: &[f64]| -> Vec<f64> {
        (0..horizon)
            .map(|t| {
                let window = scenario.window(t);
                (0..s_user.len())
                    .filter(|&k| slot_of[k].is_some_and(|tk| window.contains(&tk)))
                    .map(|k| s_user[k])
                    .sum()
            })
            .collect()
    };
    while active.iter().any(|&a| a) {
        let used = usage(&s_user);
        let mut step = f64::INFINITY;
        for t in 0..horizon {
            let window = scenario.window(t);
            let load: f64 = (0..s_user.len())
                .filter(|&k| active[k] && slot_of[k].is_some_and(|tk| window.contains(&tk)))
                .map(|k| weight[k])
                .sum();
            if load > 0.0 {
                step = step.min(((smax - used[t]) / load).max(0.0));
            }
        }
        if !step.is_finite() {
            break;
        }
        for k in 0..s_user.len() {
            if active[k] {
                s_user[k] += step * weight[k];
            }
        }
        let used = usage(&s_user);
        let mut froze = false;
        for t in 0..horizon {
            if smax - used[t] <= tol {
                let window = scenario.window(t);
                for k in 0..s_user.len() {
                    if active[k] && slot_of[k].is_some_and(|tk| window.contains(&tk)) {
                        active[k] = false;
                        froze = true;
                    }
                }
            }
        }
        if !froze {
            break;
        }
    }
    BenchmarkPlan {
        s_user,
        ..plan.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Params, TauSource};
    use crate::utility::tests::household;
    use crate::utility::validate_feasibility;

    fn params(horizon: usize, smax: f64, delta: usize) -> Params {
        Params {
            horizon,
            smax_mbps: smax,
            delta,
            theta: 10.0,
            tau_source: TauSource::Race,
        }
    }

    #[test]
    fn single_critical_user_is_served() {
        let s = Scenario::new(vec![household("a", 1, 1, 1.0, 2)], params(2, 1.0, 0)).unwrap();
        let plan = solve_benchmark(&s, &BenchmarkConfig::default()).unwrap();
        assert_eq!(plan.served_count, 1);
        assert_eq!(plan.s_user, vec![1.0]);
    }

    #[test]
    fn capacity_admits_two_of_three() {
        let hs = (1..=3).map(|a| household(&format!("u{a}"), a, 1, 1.0, 3)).collect();
        let s = Scenario::new(hs, params(3, 2.0, 3)).unwrap();
        let plan = solve_benchmark(&s, &BenchmarkConfig::default()).unwrap();
        assert_eq!(plan.served_count, 2);
        assert!(plan.optimal);
    }

    #[test]
    fn strict_mode_reports_blocking_users() {
        let hs = vec![household("a", 1, 1, 1.0, 1), household("b", 2, 1, 1.0, 1)];
        let s = Scenario::new(hs, params(2, 1.0, 0)).unwrap();
        let conditional = solve_benchmark(&s, &BenchmarkConfig::default()).unwrap();
        assert_eq!(conditional.served_count, 1);
        let strict = BenchmarkConfig {
            strict: true,
            ..BenchmarkConfig::default()
        };
        match solve_benchmark(&s, &strict).unwrap_err() {
            Error::BenchmarkInfeasible { blocking } => assert_eq!(blocking.len(), 1),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_phi_outside_unit_interval() {
        let s = Scenario::new(vec![household("a", 1, 1, 1.0, 1)], params(1, 1.0, 0)).unwrap();
        let config = BenchmarkConfig {
            phi_rule: PhiRule::uniform(1.5),
            ..BenchmarkConfig::default()
        };
        assert!(solve_benchmark(&s, &config).is_err());
    }

    #[test]
    fn even_split_of_leftover() {
        let hs = vec![household("a", 1, 1, 1.0, 1), household("b", 1, 1, 10.0, 1)];
        let s = Scenario::new(hs, params(1, 11.0, 0)).unwrap();
        let plan = solve_benchmark(&s, &BenchmarkConfig::default()).unwrap();
        assert_eq!(plan.s_user, vec![1.0, 0.0]);
        let spread = redistribute_surplus(&s, &plan, Redistribution::Global);
        assert_eq!(spread.s_user, vec![6.0, 5.0]);
        let again = redistribute_surplus(&s, &spread, Redistribution::Global);
        assert_eq!(again.s_user, spread.s_user);
    }

    #[test]
    fn disjoint_windows_split_separately() {
        let hs = vec![
            household("a", 1, 1, 1.0, 1),
            household("b", 2, 1, 10.0, 2),
            household("c", 2, 1, 10.0, 2),
        ];
        let s = Scenario::new(hs, params(2, 10.0, 0)).unwrap();
        let plan = BenchmarkPlan {
            z: vec![vec![true, false], vec![false, true]],
            s_user: vec![1.0, 0.0, 0.0],
            served_count: 3,
            optimal: true,
        };
        let spread = redistribute_surplus(&s, &plan, Redistribution::Global);
        assert_eq!(spread.s_user, vec![10.0, 5.0, 5.0]);
        let alloc = spread.to_allocation_plan(&s);
        assert!(validate_feasibility(&s, &alloc).is_empty());
    }

    #[test]
    fn per_area_split() {
        let hs = vec![
            household("a", 1, 1, 10.0, 1),
            household("b", 2, 1, 10.0, 1),
            household("c", 2, 1, 10.0, 1),
        ];
        let s = Scenario::new(hs, params(1, 12.0, 0)).unwrap();
        let plan = BenchmarkPlan {
            z: vec![vec![true], vec![true]],
            s_user: vec![0.0; 3],
            served_count: 3,
            optimal: true,
        };
        let spread = redistribute_surplus(&s, &plan, Redistribution::PerArea);
        assert_eq!(spread.s_user, vec![6.0, 3.0, 3.0]);
    }
}
