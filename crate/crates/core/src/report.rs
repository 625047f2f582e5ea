//! Metrics over a plan (effective data rate, normalized utility, group and
//! area aggregates), plan file I/O and number formatting for reports.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::scenario::{Attribute, Scenario};
use crate::utility::{perceived_rate, total_true_objective, user_utility, weighted_sigmoid, AllocationPlan};

pub const SIGNIFICANT_DIGITS: usize = 9;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Report formatting: nine significant digits, shortest representation.
pub fn sig(x: f64) -> String {
    format!("{}", round_sig(x))
}

/// JSON number rounded like [`sig`]; non-finite values become `null`.
pub fn json_num(x: f64) -> Value {
    serde_json::Number::from_f64(round_sig(x)).map_or(Value::Null, Value::Number)
}

/// Effective data rate per user: allocated rate summed over serve slots
/// before the user's deadline.
pub fn compute_edr(scenario: &Scenario, plan: &AllocationPlan) -> Vec<f64> {
    scenario
        .households
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let n = scenario.area_of(k);
            let rate = perceived_rate(scenario, plan, k);
            (0..h.deadline().min(scenario.horizon()))
                .filter(|&t| plan.z[n][t])
                .map(|_| rate)
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserMetrics {
    pub user_id: String,
    pub area_id: u32,
    pub edr_mbps: f64,
    pub utility: f64,
    pub normalized_utility: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub attribute: Attribute,
    pub value: f64,
    pub users: usize,
    pub mean_normalized_utility: f64,
    pub satisfied_fraction: f64,
    /// Minimum, quartiles and maximum of the group's EDR.
    pub edr_quantiles: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub total_utility: f64,
    pub per_user: Vec<UserMetrics>,
    pub per_group: Vec<GroupStats>,
    /// `(area_id, utility)`
    pub per_area: Vec<(u32, f64)>,
    pub per_slot: Vec<f64>,
    pub upper_bound: Option<f64>,
    pub gap: Option<f64>,
}

pub fn user_metrics(scenario: &Scenario, plan: &AllocationPlan) -> Vec<UserMetrics> {
    let edr = compute_edr(scenario, plan);
    scenario
        .households
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let utility = user_utility(scenario, plan, k);
            let normalized = utility / scenario.tau(k);
            UserMetrics {
                user_id: h.id.clone(),
                area_id: h.area_id,
                edr_mbps: edr[k],
                utility,
                normalized_utility: normalized,
                satisfied: normalized > 0.5,
            }
        })
        .collect()
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-value aggregates of `attribute`; values without users are omitted.
pub fn group_report(scenario: &Scenario, plan: &AllocationPlan, attribute: Attribute) -> Vec<GroupStats> {
    group_stats(scenario, &user_metrics(scenario, plan), attribute)
}

fn group_stats(scenario: &Scenario, users: &[UserMetrics], attribute: Attribute) -> Vec<GroupStats> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (k, h) in scenario.households.iter().enumerate() {
        groups.entry(attribute.value(h).to_bits()).or_default().push(k);
    }
    let mut out: Vec<GroupStats> = groups
        .into_iter()
        .map(|(bits, members)| {
            let n = members.len() as f64;
            let mut edr: Vec<f64> = members.iter().map(|&k| users[k].edr_mbps).collect();
            edr.sort_by(f64::total_cmp);
            GroupStats {
                attribute,
                value: f64::from_bits(bits),
                users: members.len(),
                mean_normalized_utility: members.iter().map(|&k| users[k].normalized_utility).sum::<f64>() / n,
                satisfied_fraction: members.iter().filter(|&&k| users[k].satisfied).count() as f64 / n,
                edr_quantiles: [0.0, 0.25, 0.5, 0.75, 1.0].map(|q| quantile(&edr, q)),
            }
        })
        .collect();
    out.sort_by(|a, b| a.value.total_cmp(&b.value));
    out
}

pub fn metrics_report(
    scenario: &Scenario,
    plan: &AllocationPlan,
    group_by: Attribute,
    upper_bound: Option<f64>,
) -> MetricsReport {
    let per_user = user_metrics(scenario, plan);
    let total_utility = total_true_objective(scenario, plan);
    let mut per_area: Vec<(u32, f64)> = scenario.areas.iter().map(|a| (a.area_id, 0.0)).collect();
    let mut per_slot = vec![0.0; scenario.horizon()];
    let theta = scenario.params.theta;
    for (k, h) in scenario.households.iter().enumerate() {
        let n = scenario.area_of(k);
        per_area[n].1 += per_user[k].utility;
        let v = weighted_sigmoid(scenario.tau(k), h.demand_mbps, theta, perceived_rate(scenario, plan, k));
        for t in 0..h.deadline().min(scenario.horizon()) {
            if plan.z[n][t] {
                per_slot[t] += v;
            }
        }
    }
    let gap = upper_bound.map(|ub| if ub > 0.0 { (ub - total_utility) / ub } else { 0.0 });
    MetricsReport {
        total_utility,
        per_group: group_stats(scenario, &per_user, group_by),
        per_user,
        per_area,
        per_slot,
        upper_bound,
        gap,
    }
}

impl MetricsReport {
    pub fn satisfied_fraction(&self) -> f64 {
        if self.per_user.is_empty() {
            return 0.0;
        }
        self.per_user.iter().filter(|u| u.satisfied).count() as f64 / self.per_user.len() as f64
    }

    pub fn write_users_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "user_id,area_id,edr_mbps,utility,normalized_utility,satisfied")?;
        for u in &self.per_user {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                u.user_id,
                u.area_id,
                sig(u.edr_mbps),
                sig(u.utility),
                sig(u.normalized_utility),
                u.satisfied
            )?;
        }
        Ok(())
    }

    pub fn write_groups_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "group_by,group_value,users,mean_normalized_utility,satisfied_fraction,edr_min,edr_q25,edr_median,edr_q75,edr_max"
        )?;
        for g in &self.per_group {
            let q: Vec<String> = g.edr_quantiles.iter().map(|&v| sig(v)).collect();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                g.attribute,
                sig(g.value),
                g.users,
                sig(g.mean_normalized_utility),
                sig(g.satisfied_fraction),
                q.join(",")
            )?;
        }
        Ok(())
    }

    pub fn write_areas_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "area_id,utility")?;
        for (id, v) in &self.per_area {
            writeln!(w, "{id},{}", sig(*v))?;
        }
        Ok(())
    }

    pub fn write_slots_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "slot,utility")?;
        for (t, v) in self.per_slot.iter().enumerate() {
            writeln!(w, "{},{}", t + 1, sig(*v))?;
        }
        Ok(())
    }

    /// Summary rows `metric,value`.
    pub fn summary(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map(sig).unwrap_or_default();
        vec![
            ("total_utility", sig(self.total_utility)),
            ("upper_bound", opt(self.upper_bound)),
            ("gap", opt(self.gap)),
            ("users", self.per_user.len().to_string()),
            ("satisfied_fraction", sig(self.satisfied_fraction())),
            (
                "mean_edr_mbps",
                sig(self.per_user.iter().map(|u| u.edr_mbps).sum::<f64>() / self.per_user.len().max(1) as f64),
            ),
        ]
    }

    pub fn to_json(&self) -> Value {
        json!({
            "total_utility": json_num(self.total_utility),
            "upper_bound": self.upper_bound.map_or(Value::Null, json_num),
            "gap": self.gap.map_or(Value::Null, json_num),
            "satisfied_fraction": json_num(self.satisfied_fraction()),
            "per_user": self.per_user.iter().map(|u| json!({
                "user_id": u.user_id,
                "area_id": u.area_id,
                "edr_mbps": json_num(u.edr_mbps),
                "utility": json_num(u.utility),
                "normalized_utility": json_num(u.normalized_utility),
                "satisfied": u.satisfied,
            })).collect::<Vec<_>>(),
            "per_group": self.per_group.iter().map(|g| json!({
                "group_by": g.attribute.name(),
                "group_value": json_num(g.value),
                "users": g.users,
                "mean_normalized_utility": json_num(g.mean_normalized_utility),
                "satisfied_fraction": json_num(g.satisfied_fraction),
                "edr_quantiles": g.edr_quantiles.iter().map(|&v| json_num(v)).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "per_area": self.per_area.iter().map(|(id, v)| json!({"area_id": id, "utility": json_num(*v)})).collect::<Vec<_>>(),
            "per_slot": self.per_slot.iter().enumerate().map(|(t, v)| json!({"slot": t + 1, "utility": json_num(*v)})).collect::<Vec<_>>(),
        })
    }
}

/// One row of an EDR CDF table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfRow {
    pub solver: String,
    pub group_by: String,
    pub group_value: String,
    pub user_id: String,
    pub edr_mbps: f64,
    pub normalized_utility: f64,
    pub cdf: f64,
}

pub const CDF_HEADER: &str = "solver,group_by,group_value,user_id,edr_mbps,normalized_utility,cdf";

/// Empirical EDR CDF per group: users sorted by EDR (ties by id), `cdf` is
/// the fraction of the group with EDR at most the row's EDR.
pub fn edr_cdf(
    scenario: &Scenario,
    plan: &AllocationPlan,
    solver: &str,
    group_by: Option<Attribute>,
) -> Vec<CdfRow> {
    let users = user_metrics(scenario, plan);
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (k, h) in scenario.households.iter().enumerate() {
        let key = group_by.map_or(0, |a| a.value(h).to_bits());
        groups.entry(key).or_default().push(k);
    }
    let mut keys: Vec<u64> = groups.keys().copied().collect();
    keys.sort_by(|a, b| f64::from_bits(*a).total_cmp(&f64::from_bits(*b)));
    let mut rows = Vec::new();
    for key in keys {
        let mut members = groups[&key].clone();
        members.sort_by(|&a, &b| {
            users[a]
                .edr_mbps
                .total_cmp(&users[b].edr_mbps)
                .then_with(|| users[a].user_id.cmp(&users[b].user_id))
        });
        let n = members.len() as f64;
        for &k in &members {
            let at_most = members.iter().filter(|&&j| users[j].edr_mbps <= users[k].edr_mbps).count();
            rows.push(CdfRow {
                solver: solver.into(),
                group_by: group_by.map_or("all".into(), |a| a.name().into()),
                group_value: group_by.map_or("all".into(), |_| sig(f64::from_bits(key))),
                user_id: users[k].user_id.clone(),
                edr_mbps: users[k].edr_mbps,
                normalized_utility: users[k].normalized_utility,
                cdf: at_most as f64 / n,
            });
        }
    }
    rows
}

pub fn write_cdf_csv<W: Write>(rows: &[CdfRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CDF_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.solver,
            r.group_by,
            r.group_value,
            r.user_id,
            sig(r.edr_mbps),
            sig(r.normalized_utility),
            sig(r.cdf)
        )?;
    }
    Ok(())
}

pub fn cdf_json(rows: &[CdfRow]) -> Value {
    Value::Array(
        rows.iter()
            .map(|r| {
                json!({
                    "solver": r.solver,
                    "group_by": r.group_by,
                    "group_value": r.group_value,
                    "user_id": r.user_id,
                    "edr_mbps": json_num(r.edr_mbps),
                    "normalized_utility": json_num(r.normalized_utility),
                    "cdf": json_num(r.cdf),
                })
            })
            .collect(),
    )
}

pub const PLAN_AREA_HEADER: &str = "area_id,serve_slot,s_n_mbps";
pub const PLAN_USER_HEADER: &str = "user_id,w";

/// Writes a plan: one `area_id,serve_slot,s_n_mbps` row per serve (slot
/// 1-based, `0` for unserved areas), a blank line, then `user_id,w` rows.
/// Values are written at full precision so a re-read plan is identical.
pub fn write_plan<W: Write>(scenario: &Scenario, plan: &AllocationPlan, mut w: W) -> Result<()> {
    let io = |e| Error::io("plan", e);
    writeln!(w, "{PLAN_AREA_HEADER}").map_err(io)?;
    for (n, area) in scenario.areas.iter().enumerate() {
        let slots: Vec<usize> = (0..scenario.horizon()).filter(|&t| plan.z[n][t]).collect();
        if slots.is_empty() {
            writeln!(w, "{},0,{}", area.area_id, plan.s[n]).map_err(io)?;
        }
        for t in slots {
            writeln!(w, "{},{},{}", area.area_id, t + 1, plan.s[n]).map_err(io)?;
        }
    }
    writeln!(w).map_err(io)?;
    writeln!(w, "{PLAN_USER_HEADER}").map_err(io)?;
    for (k, h) in scenario.households.iter().enumerate() {
        writeln!(w, "{},{}", h.id, plan.w[k]).map_err(io)?;
    }
    Ok(())
}

fn parse_f64(field: &str, line: usize, name: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::parse(line, format!("{name}: not a finite number: {field:?}")))
}

pub fn read_plan<R: Read>(scenario: &Scenario, reader: R) -> Result<AllocationPlan> {
    let horizon = scenario.horizon();
    let mut z = vec![vec![false; horizon]; scenario.num_areas()];
    let mut s = vec![0.0; scenario.num_areas()];
    let mut w = vec![0.0; scenario.num_users()];
    let mut section = 0;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("plan", e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == PLAN_AREA_HEADER {
            section = 1;
            continue;
        }
        if line == PLAN_USER_HEADER {
            section = 2;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match section {
            1 => {
                if fields.len() != 3 {
                    return Err(Error::parse(lineno, format!("expected 3 fields, found {}", fields.len())));
                }
                let area_id: u32 = fields[0]
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("area_id: {:?}", fields[0])))?;
                let n = scenario
                    .area_index(area_id)
                    .ok_or_else(|| Error::parse(lineno, format!("unknown area_id {area_id}")))?;
                let slot: usize = fields[1]
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("serve_slot: {:?}", fields[1])))?;
                if slot > horizon {
                    return Err(Error::parse(lineno, format!("serve_slot {slot} beyond horizon {horizon}")));
                }
                if slot > 0 {
                    z[n][slot - 1] = true;
                }
                s[n] = parse_f64(fields[2], lineno, "s_n_mbps")?;
            }
            2 => {
                if fields.len() != 2 {
                    return Err(Error::parse(lineno, format!("expected 2 fields, found {}", fields.len())));
                }
                let k = scenario
                    .user_index(fields[0].trim())
                    .ok_or_else(|| Error::parse(lineno, format!("unknown user_id {:?}", fields[0])))?;
                w[k] = parse_f64(fields[1], lineno, "w")?;
            }
            _ => return Err(Error::parse(lineno, format!("expected header {PLAN_AREA_HEADER:?}"))),
        }
    }
    if section == 0 {
        return Err(Error::parse(1, "empty plan file"));
    }
    Ok(AllocationPlan::new(scenario, z, s, w))
}
