//! Best-first branch and bound on the envelope relaxation.
//!
//! A node restricts each area to a set of allowed serve slots and may shrink
//! the box of individual allocation columns, where the envelope is rebuilt
//! for the smaller box. Slot branching splits an area's allowed set into
//! singletons for its active slots plus the remainder; box branching splits a
//! column's interval. Incumbents come from plan extraction at every node.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use serde::Serialize;

use crate::envelope::{build_box_envelope, build_envelopes, EnvelopePiece};
use crate::error::{Error, Result};
use crate::heuristic::{extract_plan, solve_heuristic};
use crate::lp::{try_solve_columns, ColumnSpec, RelaxationSolution};
use crate::report::sig;
use crate::scenario::Scenario;
use crate::utility::{total_true_objective, weighted_sigmoid, AllocationPlan, ZERO_MBPS};

pub const DEFAULT_NODE_LIMIT: usize = 100_000;
pub const DEFAULT_ALPHA: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BnbStatus {
    /// Gap reached the target.
    Converged,
    /// Every node was fathomed.
    Exhausted,
    NodeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BnbProgress {
    pub nodes_explored: usize,
    pub upper_bound: f64,
    pub lower_bound: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BnbResult {
    pub best_plan: AllocationPlan,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub gap_alpha: f64,
    pub nodes_explored: usize,
    pub status: BnbStatus,
    pub progress: Vec<BnbProgress>,
}

impl BnbResult {
    pub fn write_progress_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "nodes_explored,upper_bound,lower_bound,gap")?;
        for p in &self.progress {
            writeln!(
                w,
                "{},{},{},{}",
                p.nodes_explored,
                sig(p.upper_bound),
                sig(p.lower_bound),
                sig(p.gap)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Branch {
    /// Singleton children for `slots`, plus one child with the rest.
    Slots { area: usize, slots: Vec<usize> },
    Interval { user: usize, slot: usize, at: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    id: u64,
    depth: usize,
    bound: f64,
    allowed: Vec<Vec<usize>>,
    boxes: BTreeMap<(usize, usize), (f64, f64)>,
    branch: Option<Branch>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    /// Larger bound first; among equal bounds the older node.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound).then_with(|| other.id.cmp(&self.id))
    }
}

struct Search<'a> {
    scenario: &'a Scenario,
    envelopes: Vec<EnvelopePiece>,
    best_plan: AllocationPlan,
    lower_bound: f64,
    next_id: u64,
}

/// Serves every unserved area that has an allowed slot at zero resource, at
/// the slot where its users' zero-rate utility is largest. Costs no capacity.
fn serve_idle_areas(scenario: &Scenario, plan: &AllocationPlan, allowed: &[Vec<usize>]) -> AllocationPlan {
    let theta = scenario.params.theta;
    let mut serve = plan.serve_slots();
    let mut w = plan.w.clone();
    for (n, area) in scenario.areas.iter().enumerate() {
        if serve[n].is_some() {
            continue;
        }
        let value = |t: usize| -> f64 {
            area.household_ids
                .iter()
                .filter(|&&k| t < scenario.households[k].deadline())
                .map(|&k| weighted_sigmoid(scenario.tau(k), scenario.households[k].demand_mbps, theta, 0.0))
                .sum()
        };
        let mut best: Option<(usize, f64)> = None;
        for &t in &allowed[n] {
            let v = value(t);
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((t, v));
            }
        }
        if let Some((t, _)) = best {
            serve[n] = Some(t);
            let share = 1.0 / area.household_ids.len() as f64;
            for &k in &area.household_ids {
                w[k] = share;
            }
        }
    }
    AllocationPlan::from_serve_slots(scenario, &serve, plan.s.clone(), w)
}

impl Search<'_> {
    fn columns(&self, allowed: &[Vec<usize>], boxes: &BTreeMap<(usize, usize), (f64, f64)>) -> Vec<ColumnSpec> {
        let s = self.scenario;
        let smax = s.params.smax_mbps;
        let theta = s.params.theta;
        let mut columns = Vec::new();
        for (k, h) in s.households.iter().enumerate() {
            let env = &self.envelopes[k];
            for &t in &allowed[s.area_of(k)] {
                if t >= h.deadline() {
                    continue;
                }
                let (lo, hi, pieces) = match boxes.get(&(k, t)) {
                    Some(&(lo, hi)) => (lo, hi, build_box_envelope(s.tau(k), h.demand_mbps, theta, lo, hi).pieces),
                    None => (0.0, smax, vec![(env.a, env.b), (0.0, env.cap)]),
                };
                columns.push(ColumnSpec {
                    user: k,
                    slot: t,
                    lo,
                    hi,
                    pieces,
                });
            }
        }
        columns
    }

    /// Solves the node relaxation, updates the incumbent and picks a branch.
    /// `None` when the node is infeasible.
    fn evaluate(
        &mut self,
        allowed: Vec<Vec<usize>>,
        boxes: BTreeMap<(usize, usize), (f64, f64)>,
        parent_bound: f64,
        depth: usize,
    ) -> Result<Option<Node>> {
        let columns = self.columns(&allowed, &boxes);
        let Some(sol) = try_solve_columns(self.scenario, &columns)? else {
            return Ok(None);
        };
        if let Some(plan) = extract_plan(self.scenario, &sol.x) {
            let plan = serve_idle_areas(self.scenario, &plan, &allowed);
            let value = total_true_objective(self.scenario, &plan);
            if value > self.lower_bound {
                self.lower_bound = value;
                self.best_plan = plan;
            }
        }
        let bound = sol.value.min(parent_bound);
        let branch = self.choose_branch(&sol, &allowed, &boxes, bound);
        let id = self.next_id;
        self.next_id += 1;
        Ok(Some(Node {
            id,
            depth,
            bound,
            allowed,
            boxes,
            branch,
        }))
    }

    fn choose_branch(
        &self,
        sol: &RelaxationSolution,
        allowed: &[Vec<usize>],
        boxes: &BTreeMap<(usize, usize), (f64, f64)>,
        bound: f64,
    ) -> Option<Branch> {
        let s = self.scenario;
        let horizon = s.horizon();
        let mut mass = vec![vec![0.0; horizon]; s.num_areas()];
        for (k, row) in sol.x.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                if v > ZERO_MBPS {
                    mass[s.area_of(k)][t] += v;
                }
            }
        }
        // areas spreading allocation over several slots come first
        let mut spread: Option<(usize, f64)> = None;
        for (n, row) in mass.iter().enumerate() {
            let active = row.iter().filter(|&&m| m > 0.0).count();
            if active < 2 {
                continue;
            }
            let total: f64 = row.iter().sum();
            let top = row.iter().copied().fold(0.0, f64::max);
            let outside = total - top;
            if spread.is_none_or(|(_, best)| outside > best) {
                spread = Some((n, outside));
            }
        }
        if let Some((area, _)) = spread {
            let slots = (0..horizon).filter(|&t| mass[area][t] > 0.0).collect();
            return Some(Branch::Slots { area, slots });
        }

        // otherwise compare utility claimed at unused slots with envelope slack
        let theta = s.params.theta;
        let smax = s.params.smax_mbps;
        let mut slot_gap: Option<(usize, usize, f64)> = None;
        let mut column_gap: Option<(usize, usize, f64)> = None;
        for (n, area) in s.areas.iter().enumerate() {
            let kept = (0..horizon).find(|&t| mass[n][t] > 0.0).or_else(|| {
                // slot the idle completion would pick: most zero-rate utility
                allowed[n]
                    .iter()
                    .copied()
                    .max_by(|&a, &b| {
                        let claim = |t: usize| -> f64 { area.household_ids.iter().map(|&k| sol.beta[k][t]).sum() };
                        claim(a).total_cmp(&claim(b)).then(b.cmp(&a))
                    })
            });
            let Some(kept) = kept else { continue };
            if allowed[n].len() > 1 {
                let claimed: f64 = area
                    .household_ids
                    .iter()
                    .flat_map(|&k| allowed[n].iter().filter(move |&&t| t != kept).map(move |&t| sol.beta[k][t]))
                    .sum();
                if slot_gap.is_none_or(|(_, _, g)| claimed > g) {
                    slot_gap = Some((n, kept, claimed));
                }
            }
            for &k in &area.household_ids {
                if kept >= s.households[k].deadline() {
                    continue;
                }
                let (lo, hi) = boxes.get(&(k, kept)).copied().unwrap_or((0.0, smax));
                if hi - lo <= 1e-7 * smax.max(1.0) {
                    continue;
                }
                let x = sol.x[k][kept];
                let gap = sol.beta[k][kept] - weighted_sigmoid(s.tau(k), s.households[k].demand_mbps, theta, x);
                if column_gap.is_none_or(|(_, _, g)| gap > g) {
                    column_gap = Some((k, kept, gap));
                }
            }
        }
        let negligible = 1e-12 * bound.abs().max(1.0);
        let slot_value = slot_gap.map_or(0.0, |g| g.2);
        let column_value = column_gap.map_or(0.0, |g| g.2);
        if slot_value.max(column_value) <= negligible {
            return None;
        }
        if slot_value >= column_value {
            let (area, kept, _) = slot_gap?;
            Some(Branch::Slots { area, slots: vec![kept] })
        } else {
            let (user, slot, _) = column_gap?;
            let (lo, hi) = boxes.get(&(user, slot)).copied().unwrap_or((0.0, smax));
            let x = sol.x[user][slot];
            let width = hi - lo;
            let at = if x > lo + 0.1 * width && x < hi - 0.1 * width {
                x
            } else {
                lo + 0.5 * width
            };
            Some(Branch::Interval { user, slot, at })
        }
    }

    fn children(&mut self, node: &Node) -> Result<Vec<Node>> {
        let mut out = Vec::new();
        match node.branch.as_ref() {
            None => {}
            Some(Branch::Slots { area, slots }) => {
                for &t in slots {
                    let mut allowed = node.allowed.clone();
                    allowed[*area] = vec![t];
                    out.extend(self.evaluate(allowed, node.boxes.clone(), node.bound, node.depth + 1)?);
                }
                let mut allowed = node.allowed.clone();
                allowed[*area].retain(|t| !slots.contains(t));
                out.extend(self.evaluate(allowed, node.boxes.clone(), node.bound, node.depth + 1)?);
            }
            Some(&Branch::Interval { user, slot, at }) => {
                let smax = self.scenario.params.smax_mbps;
                let (lo, hi) = node.boxes.get(&(user, slot)).copied().unwrap_or((0.0, smax));
                for part in [(lo, at), (at, hi)] {
                    let mut boxes = node.boxes.clone();
                    boxes.insert((user, slot), part);
                    out.extend(self.evaluate(node.allowed.clone(), boxes, node.bound, node.depth + 1)?);
                }
            }
        }
        Ok(out)
    }
}

pub fn solve_bnb(scenario: &Scenario, alpha_target: f64, node_limit: usize) -> Result<BnbResult> {
    if !(alpha_target > 0.0 && alpha_target < 1.0) {
        return Err(Error::Argument(format!("alpha must lie in (0, 1), got {alpha_target}")));
    }
    let all_slots: Vec<Vec<usize>> = vec![(0..scenario.horizon()).collect(); scenario.num_areas()];
    let heuristic = solve_heuristic(scenario)?;
    let start = serve_idle_areas(scenario, &heuristic.final_plan, &all_slots);
    let mut search = Search {
        scenario,
        envelopes: build_envelopes(scenario)?,
        lower_bound: total_true_objective(scenario, &start),
        best_plan: start,
        next_id: 0,
    };
    let mut heap = BinaryHeap::new();
    let mut nodes_explored = 1;
    if let Some(root) = search.evaluate(all_slots, BTreeMap::new(), f64::INFINITY, 0)? {
        heap.push(root);
    }
    let mut closed = f64::NEG_INFINITY;
    let mut progress = Vec::new();
    let status = loop {
        let lb = search.lower_bound;
        let open = heap.peek().map_or(f64::NEG_INFINITY, |n: &Node| n.bound);
        let ub = open.max(closed).max(lb);
        let gap = if ub > 0.0 { ((ub - lb) / ub).max(0.0) } else { 0.0 };
        progress.push(BnbProgress {
            nodes_explored,
            upper_bound: ub,
            lower_bound: lb,
            gap,
        });
        if gap <= alpha_target {
            break BnbStatus::Converged;
        }
        if heap.is_empty() {
            break BnbStatus::Exhausted;
        }
        if nodes_explored >= node_limit {
            break BnbStatus::NodeLimit;
        }
        let node = heap.pop().expect("heap is non-empty");
        let prune = 1e-9 * lb.abs().max(1.0);
        if node.bound <= lb + prune {
            continue;
        }
        if node.branch.is_none() {
            closed = closed.max(node.bound);
            continue;
        }
        for child in search.children(&node)? {
            nodes_explored += 1;
            if child.bound > search.lower_bound + prune {
                heap.push(child);
            }
        }
    };
    let last = progress.last().expect("at least one progress row");
    Ok(BnbResult {
        lower_bound: last.lower_bound,
        upper_bound: last.upper_bound,
        gap_alpha: last.gap,
        best_plan: search.best_plan,
        nodes_explored,
        status,
        progress,
    })
}

/// Gap of `plan` against the bound in `result`.
pub fn certify(scenario: &Scenario, plan: &AllocationPlan, result: &BnbResult) -> Result<f64> {
    let value = total_true_objective(scenario, plan);
    if result.upper_bound == 0.0 {
        return if value == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::Solver("zero upper bound with a positive plan objective".into()))
        };
    }
    Ok((result.upper_bound - value) / result.upper_bound)
}
