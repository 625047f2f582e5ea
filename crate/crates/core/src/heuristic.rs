//! Spatial-temporal rounding: solve the envelope relaxation, and while some
//! area receives resource at more than one slot, keep one slot per such area
//! (by utility-resource ratio) and forbid the rest.

use std::collections::BTreeSet;
use std::io::Write;

use serde::Serialize;

use crate::envelope::build_envelopes;
use crate::error::{Error, Result};
use crate::lp::solve_forbidden;
use crate::report::sig;
use crate::scenario::Scenario;
use crate::utility::{total_true_objective, weighted_sigmoid, AllocationPlan, ZERO_MBPS};

/// Relative tolerance under which two ratios count as tied.
pub const URR_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UrrTable {
    /// `gamma[n][t]`
    pub gamma: Vec<Vec<f64>>,
    /// Whether area `n` holds any allocation above [`ZERO_MBPS`] at `t`.
    pub active: Vec<Vec<bool>>,
}

impl UrrTable {
    pub fn active_slots(&self, n: usize) -> Vec<usize> {
        (0..self.active[n].len()).filter(|&t| self.active[n][t]).collect()
    }
}

pub fn compute_urr(scenario: &Scenario, x: &[Vec<f64>]) -> UrrTable {
    let horizon = scenario.horizon();
    let mut gamma = vec![vec![0.0; horizon]; scenario.num_areas()];
    let mut active = vec![vec![false; horizon]; scenario.num_areas()];
    let theta = scenario.params.theta;
    for (k, h) in scenario.households.iter().enumerate() {
        let n = scenario.area_of(k);
        for t in 0..horizon {
            let v = x[k][t];
            if v <= ZERO_MBPS {
                continue;
            }
            active[n][t] = true;
            if t < h.deadline() {
                gamma[n][t] += weighted_sigmoid(scenario.tau(k), h.demand_mbps, theta, v) / v;
            }
        }
    }
    UrrTable { gamma, active }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Temporal,
    Spatial,
    TieBreaker,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Temporal => "temporal",
            Policy::Spatial => "spatial",
            Policy::TieBreaker => "tie_breaker",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyDecision {
    pub area: usize,
    pub kept: usize,
    pub policy: Policy,
    pub forbidden: Vec<usize>,
}

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= URR_TIE_TOL * a.abs().max(b.abs())
}

/// Number of other areas whose ratio at `t` is strictly below area `n`'s.
fn rank(urr: &UrrTable, n: usize, t: usize) -> usize {
    let g = urr.gamma[n][t];
    (0..urr.gamma.len())
        .filter(|&m| m != n && urr.gamma[m][t] < g && !tied(urr.gamma[m][t], g))
        .count()
}

/// Chooses the slot an area keeps among its active slots.
pub fn decide_slot(urr: &UrrTable, n: usize) -> Option<(usize, Policy)> {
    let slots = urr.active_slots(n);
    let best = slots.iter().map(|&t| urr.gamma[n][t]).fold(f64::NEG_INFINITY, f64::max);
    let top: Vec<usize> = slots.into_iter().filter(|&t| tied(urr.gamma[n][t], best)).collect();
    match top.len() {
        0 => None,
        1 => Some((top[0], Policy::Temporal)),
        _ => {
            let best_rank = top.iter().map(|&t| rank(urr, n, t)).max()?;
            let ranked: Vec<usize> = top.into_iter().filter(|&t| rank(urr, n, t) == best_rank).collect();
            if ranked.len() == 1 {
                Some((ranked[0], Policy::Spatial))
            } else {
                Some((ranked[0], Policy::TieBreaker))
            }
        }
    }
}

/// One decision per violating area (areas with at least two active slots).
pub fn decide_policies(urr: &UrrTable, violating: &BTreeSet<usize>) -> Vec<PolicyDecision> {
    violating
        .iter()
        .filter_map(|&n| {
            let (kept, policy) = decide_slot(urr, n)?;
            let forbidden = urr.active_slots(n).into_iter().filter(|&t| t != kept).collect();
            Some(PolicyDecision {
                area: n,
                kept,
                policy,
                forbidden,
            })
        })
        .collect()
}

/// `(area, slot)` pairs to forbid so that each violating area keeps one slot.
pub fn apply_policies(urr: &UrrTable, violating: &BTreeSet<usize>) -> BTreeSet<(usize, usize)> {
    decide_policies(urr, violating)
        .into_iter()
        .flat_map(|d| d.forbidden.into_iter().map(move |t| (d.area, t)))
        .collect()
}

/// Turns a relaxation solution with at most one active slot per area into a
/// plan; `None` if some area is active at two or more slots.
pub fn extract_plan(scenario: &Scenario, x: &[Vec<f64>]) -> Option<AllocationPlan> {
    let urr = compute_urr(scenario, x);
    let mut serve = vec![None; scenario.num_areas()];
    for (n, slot) in serve.iter_mut().enumerate() {
        let slots = urr.active_slots(n);
        if slots.len() > 1 {
            return None;
        }
        *slot = slots.first().copied();
    }
    let mut s = vec![0.0; scenario.num_areas()];
    for (k, row) in x.iter().enumerate() {
        if let Some(t) = serve[scenario.area_of(k)] {
            s[scenario.area_of(k)] += row[t];
        }
    }
    let w = x
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let n = scenario.area_of(k);
            match serve[n] {
                Some(t) if s[n] > 0.0 => row[t] / s[n],
                _ => 0.0,
            }
        })
        .collect();
    Some(AllocationPlan::from_serve_slots(scenario, &serve, s, w))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeuristicIteration {
    pub lp_value: f64,
    pub violating: Vec<usize>,
    pub decisions: Vec<PolicyDecision>,
}

impl HeuristicIteration {
    /// Distinct policies used in this iteration, `none` for the last one.
    pub fn policy_label(&self) -> String {
        let used: BTreeSet<Policy> = self.decisions.iter().map(|d| d.policy).collect();
        if used.is_empty() {
            "none".into()
        } else {
            used.iter().map(|p| p.name()).collect::<Vec<_>>().join(";")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeuristicTrace {
    pub iterations: Vec<HeuristicIteration>,
    pub final_plan: AllocationPlan,
    pub upper_bound: f64,
    pub true_objective: f64,
}

impl HeuristicTrace {
    /// One row per LP solve; `forbidden` lists `area_id:slot` pairs.
    pub fn write_csv<W: Write>(&self, scenario: &Scenario, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,lp_value,n_violating,policy,forbidden")?;
        for (i, it) in self.iterations.iter().enumerate() {
            let forbidden: Vec<String> = it
                .decisions
                .iter()
                .flat_map(|d| {
                    let id = scenario.areas[d.area].area_id;
                    d.forbidden.iter().map(move |t| format!("{id}:{}", t + 1))
                })
                .collect();
            writeln!(
                w,
                "{},{},{},{},{}",
                i + 1,
                sig(it.lp_value),
                it.violating.len(),
                it.policy_label(),
                forbidden.join(";")
            )?;
        }
        Ok(())
    }
}

pub fn solve_heuristic(scenario: &Scenario) -> Result<HeuristicTrace> {
    let envelopes = build_envelopes(scenario)?;
    let mut forbidden = BTreeSet::new();
    let mut iterations = Vec::new();
    let mut upper_bound = None;
    loop {
        let sol = solve_forbidden(scenario, &envelopes, &forbidden)?;
        upper_bound.get_or_insert(sol.value);
        let urr = compute_urr(scenario, &sol.x);
        let violating: BTreeSet<usize> = (0..scenario.num_areas())
            .filter(|&n| urr.active_slots(n).len() > 1)
            .collect();
        if violating.is_empty() {
            iterations.push(HeuristicIteration {
                lp_value: sol.value,
                violating: vec![],
                decisions: vec![],
            });
            let final_plan = extract_plan(scenario, &sol.x)
                .ok_or_else(|| Error::Solver("extraction found a doubly served area".into()))?;
            return Ok(HeuristicTrace {
                true_objective: total_true_objective(scenario, &final_plan),
                final_plan,
                upper_bound: upper_bound.unwrap_or(sol.value),
                iterations,
            });
        }
        let decisions = decide_policies(&urr, &violating);
        let before = forbidden.len();
        for d in &decisions {
            forbidden.extend(d.forbidden.iter().map(|&t| (d.area, t)));
        }
        if forbidden.len() == before {
            return Err(Error::Solver("rounding made no progress".into()));
        }
        iterations.push(HeuristicIteration {
            lp_value: sol.value,
            violating: violating.into_iter().collect(),
            decisions,
        });
    }
}
