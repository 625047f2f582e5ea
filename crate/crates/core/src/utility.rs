//! Sigmoid rate utility, in-area sharing, the exact objective and the
//! feasibility checks for allocation plans.

use std::fmt;

use serde::Serialize;

use crate::scenario::Scenario;

/// Exponent clamp keeping `exp` inside the double range.
pub const EXP_CLAMP: f64 = 700.0;

/// Allocations at or below this many Mbps count as "no allocation".
pub const ZERO_MBPS: f64 = 1e-6;

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z.clamp(-EXP_CLAMP, EXP_CLAMP)).exp())
}

/// `1 / (1 + exp(-theta (r - r_hat)))`.
pub fn sigmoid_rate_utility(r: f64, r_hat: f64, theta: f64) -> f64 {
    logistic(theta * (r - r_hat))
}

/// d/dr of [`sigmoid_rate_utility`].
pub fn sigmoid_rate_slope(r: f64, r_hat: f64, theta: f64) -> f64 {
    let s = sigmoid_rate_utility(r, r_hat, theta);
    theta * s * (1.0 - s)
}

/// Weighted sigmoid term `tau * sigma(theta (x - r_hat))` of one user.
pub fn weighted_sigmoid(tau: f64, r_hat: f64, theta: f64, x: f64) -> f64 {
    tau * sigmoid_rate_utility(x, r_hat, theta)
}

/// Data rate regained by an area from the resource deployed there. The
/// identity map; kept as the single point to swap in another monotone map.
pub fn capacity_of(s_n: f64) -> f64 {
    s_n
}

/// A candidate solution: serve indicators per (area, slot), per-area
/// resource, per-user shares, and the flattened per-(user, slot) allocation
/// `x = z * w * s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationPlan {
    /// `z[n][t]`, area-major, 0-based slots.
    pub z: Vec<Vec<bool>>,
    pub s: Vec<f64>,
    /// Indexed by user (scenario household index).
    pub w: Vec<f64>,
    /// `x[k][t]` in Mbps.
    pub x: Vec<Vec<f64>>,
}

impl AllocationPlan {
    /// Builds the plan and derives `x` from `(z, s, w)`.
    pub fn new(scenario: &Scenario, z: Vec<Vec<bool>>, s: Vec<f64>, w: Vec<f64>) -> Self {
        let horizon = scenario.horizon();
        let x = (0..scenario.num_users())
            .map(|k| {
                let n = scenario.area_of(k);
                (0..horizon)
                    .map(|t| {
                        let served = z.get(n).and_then(|row| row.get(t)).copied().unwrap_or(false);
                        if served {
                            w.get(k).copied().unwrap_or(0.0) * s.get(n).copied().unwrap_or(0.0)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        AllocationPlan { z, s, w, x }
    }

    /// Serve nothing.
    pub fn empty(scenario: &Scenario) -> Self {
        let n = scenario.num_areas();
        let t = scenario.horizon();
        Self::new(
            scenario,
            vec![vec![false; t]; n],
            vec![0.0; n],
            vec![0.0; scenario.num_users()],
        )
    }

    /// Plan with at most one serve slot per area.
    pub fn from_serve_slots(
        scenario: &Scenario,
        serve: &[Option<usize>],
        s: Vec<f64>,
        w: Vec<f64>,
    ) -> Self {
        let horizon = scenario.horizon();
        let z = serve
            .iter()
            .map(|slot| (0..horizon).map(|t| *slot == Some(t)).collect())
            .collect();
        Self::new(scenario, z, s, w)
    }

    /// First slot at which area `n` is served.
    pub fn serve_slot(&self, n: usize) -> Option<usize> {
        self.z.get(n)?.iter().position(|&on| on)
    }

    pub fn times_served(&self, n: usize) -> usize {
        self.z.get(n).map_or(0, |row| row.iter().filter(|&&on| on).count())
    }

    /// Per-area serve slots; `None` for unserved areas.
    pub fn serve_slots(&self) -> Vec<Option<usize>> {
        (0..self.z.len()).map(|n| self.serve_slot(n)).collect()
    }
}

/// Rate perceived by user `k`: its share of the area's regained capacity.
pub fn perceived_rate(scenario: &Scenario, plan: &AllocationPlan, k: usize) -> f64 {
    let n = scenario.area_of(k);
    if plan.times_served(n) == 0 {
        return 0.0;
    }
    let total: f64 = scenario.areas[n]
        .household_ids
        .iter()
        .map(|&j| plan.w[j])
        .sum();
    if total <= 0.0 {
        return 0.0;
    }
    plan.w[k] / total * capacity_of(plan.s[n])
}

/// Number of serve events for the area of `k` that land by the deadline of `k`.
fn timely_serves(scenario: &Scenario, plan: &AllocationPlan, k: usize) -> usize {
    let n = scenario.area_of(k);
    let d = scenario.households[k].deadline();
    plan.z[n].iter().take(d).filter(|&&on| on).count()
}

/// `tau * sigma(theta (r - r_hat))` times the count of serve events no later
/// than the deadline.
pub fn user_utility(scenario: &Scenario, plan: &AllocationPlan, k: usize) -> f64 {
    let timely = timely_serves(scenario, plan, k);
    if timely == 0 {
        return 0.0;
    }
    let h = &scenario.households[k];
    let r = perceived_rate(scenario, plan, k);
    scenario.tau(k) * sigmoid_rate_utility(r, h.demand_mbps, scenario.params.theta) * timely as f64
}

/// Canonical score: the exact-sigmoid total utility.
pub fn total_true_objective(scenario: &Scenario, plan: &AllocationPlan) -> f64 {
    (0..scenario.num_users())
        .map(|k| user_utility(scenario, plan, k))
        .sum()
}

/// The same objective evaluated from the flattened allocation: every served
/// slot within a user's deadline contributes `tau * sigma(theta (x - r_hat))`.
pub fn objective_from_allocation(scenario: &Scenario, plan: &AllocationPlan) -> f64 {
    let theta = scenario.params.theta;
    let mut total = 0.0;
    for (k, h) in scenario.households.iter().enumerate() {
        let n = scenario.area_of(k);
        for t in 0..h.deadline().min(scenario.horizon()) {
            if plan.z[n][t] {
                total += weighted_sigmoid(scenario.tau(k), h.demand_mbps, theta, plan.x[k][t]);
            }
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    /// Area served more than once.
    OnceServed,
    /// Sliding-window capacity exceeded.
    Window,
    /// Deployed resource outside `[0, S_max]`.
    ResourceBox,
    /// Shares outside `[0, 1]` or not summing to one on a served area.
    Share,
    /// `x` disagrees with `z * w * s`.
    Consistency,
    /// Vector dimensions do not match the scenario.
    Shape,
}

impl ViolationKind {
    pub fn tag(self) -> &'static str {
        match self {
            ViolationKind::OnceServed => "once-served",
            ViolationKind::Window => "window",
            ViolationKind::ResourceBox => "box",
            ViolationKind::Share => "share",
            ViolationKind::Consistency => "x",
            ViolationKind::Shape => "shape",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.kind.tag(), self.message)
    }
}

pub(crate) fn capacity_tolerance(smax: f64) -> f64 {
    1e-9 * smax.max(1.0)
}

/// Every constraint the plan breaks; empty means feasible.
pub fn validate_feasibility(scenario: &Scenario, plan: &AllocationPlan) -> Vec<Violation> {
    let mut out = Vec::new();
    let n_areas = scenario.num_areas();
    let horizon = scenario.horizon();
    let users = scenario.num_users();
    let smax = scenario.params.smax_mbps;
    let shape_ok = plan.z.len() == n_areas
        && plan.z.iter().all(|r| r.len() == horizon)
        && plan.s.len() == n_areas
        && plan.w.len() == users
        && plan.x.len() == users
        && plan.x.iter().all(|r| r.len() == horizon);
    if !shape_ok {
        out.push(Violation {
            kind: ViolationKind::Shape,
            message: format!("plan dimensions do not match {n_areas} areas, {users} users, T = {horizon}"),
        });
        return out;
    }

    for (n, area) in scenario.areas.iter().enumerate() {
        let times = plan.times_served(n);
        if times > 1 {
            out.push(Violation {
                kind: ViolationKind::OnceServed,
                message: format!("area {} served {times} times", area.area_id),
            });
        }
        let s_n = plan.s[n];
        if !(s_n.is_finite() && s_n >= 0.0 && s_n <= smax + capacity_tolerance(smax)) {
            out.push(Violation {
                kind: ViolationKind::ResourceBox,
                message: format!("area {}: s = {s_n} outside [0, {smax}]", area.area_id),
            });
        }
        let mut share_sum = 0.0;
        for &k in &area.household_ids {
            let w = plan.w[k];
            if !(0.0..=1.0).contains(&w) {
                out.push(Violation {
                    kind: ViolationKind::Share,
                    message: format!("user {}: w = {w} outside [0, 1]", scenario.households[k].id),
                });
            }
            share_sum += w;
        }
        if times > 0 && (share_sum - 1.0).abs() > 1e-9 {
            out.push(Violation {
                kind: ViolationKind::Share,
                message: format!("area {}: shares sum to {share_sum}", area.area_id),
            });
        }
    }

    for k in 0..users {
        let n = scenario.area_of(k);
        for t in 0..horizon {
            let expected = if plan.z[n][t] { plan.w[k] * plan.s[n] } else { 0.0 };
            if (plan.x[k][t] - expected).abs() > 1e-9 * expected.abs().max(1.0) {
                out.push(Violation {
                    kind: ViolationKind::Consistency,
                    message: format!(
                        "user {} slot {}: x = {} but z*w*s = {expected}",
                        scenario.households[k].id,
                        t + 1,
                        plan.x[k][t]
                    ),
                });
            }
        }
    }

    let per_slot: Vec<f64> = (0..horizon)
        .map(|t| plan.x.iter().map(|row| row[t]).sum())
        .collect();
    for t in 0..horizon {
        let load: f64 = scenario.window(t).map(|tp| per_slot[tp]).sum();
        if load > smax + capacity_tolerance(smax) {
            out.push(Violation {
                kind: ViolationKind::Window,
                message: format!("slot {}: window load {load} exceeds S_max = {smax}", t + 1),
            });
        }
    }
    out
}

/// Capacity check through the recursive available-resource bookkeeping:
/// the pool starts at `S_max`, placements leave it and return `delta` slots
/// later; every slot's placements must fit in what is available.
pub fn recursive_capacity_ok(scenario: &Scenario, plan: &AllocationPlan) -> bool {
    let horizon = scenario.horizon();
    let delta = scenario.params.delta;
    let smax = scenario.params.smax_mbps;
    let placed: Vec<f64> = (0..horizon)
        .map(|t| {
            (0..scenario.num_areas())
                .filter(|&n| plan.z[n][t])
                .map(|n| plan.s[n])
                .sum()
        })
        .collect();
    let mut available = smax;
    for t in 0..horizon {
        if t >= 1 {
            available -= placed[t - 1];
            if t > delta {
                available += placed[t - 1 - delta];
            }
        }
        if placed[t] > available + capacity_tolerance(smax) {
            return false;
        }
    }
    true
}
