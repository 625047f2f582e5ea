//! Linear programming: a dense bounded-variable simplex and the builder for
//! the envelope relaxation of the allocation problem.
//!
//! Problems are `max c.x + offset` subject to `A x <= b` and `lo <= x <= hi`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use crate::envelope::{build_envelopes, EnvelopePiece};
use crate::error::{Error, Result};
use crate::scenario::Scenario;

const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Columns of one `(user, slot)` allocation and its auxiliary utility
/// variable, plus the rows `beta - a x <= b` bounding the auxiliary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeColumn {
    pub user: usize,
    pub area: usize,
    pub slot: usize,
    pub x: usize,
    pub beta: usize,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VarIndex {
    /// `(user, area, slot)` to allocation column.
    pub x: BTreeMap<(usize, usize, usize), usize>,
    /// `(user, area, slot)` to auxiliary column.
    pub beta: BTreeMap<(usize, usize, usize), usize>,
    pub columns: Vec<EnvelopeColumn>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub offset: f64,
    pub rows: Vec<Row>,
    pub bounds: Vec<(f64, f64)>,
    pub var_index: VarIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective_value: f64,
    pub x_values: Vec<f64>,
    /// Row multipliers (`>= 0`) certifying optimality; empty unless optimal.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

impl LpProblem {
    pub fn new(num_vars: usize) -> Self {
        LpProblem {
            objective: vec![0.0; num_vars],
            offset: 0.0,
            rows: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); num_vars],
            var_index: VarIndex::default(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, cost: f64, lo: f64, hi: f64) -> usize {
        self.objective.push(cost);
        self.bounds.push((lo, hi));
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, rhs });
        self.rows.len() - 1
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.offset + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| {
            let lhs: f64 = r.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            (lhs - r.rhs).max(0.0)
        });
        let bounds = self
            .bounds
            .iter()
            .zip(x)
            .map(|(&(lo, hi), &v)| (lo - v).max(v - hi).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    /// Weak-duality bound `b.y + sum_j max_{lo<=x_j<=hi} (c_j - A_j.y) x_j`
    /// for non-negative row multipliers `y`; `+inf` if unbounded.
    /// Reduced costs within `1e-9` of zero are treated as zero.
    pub fn dual_objective(&self, y: &[f64]) -> f64 {
        let mut reduced = self.objective.clone();
        let mut total = self.offset;
        for (row, &yi) in self.rows.iter().zip(y) {
            let yi = yi.max(0.0);
            total += row.rhs * yi;
            for &(j, a) in &row.coeffs {
                reduced[j] -= a * yi;
            }
        }
        for ((r, &(lo, hi)), c) in reduced.iter().zip(&self.bounds).zip(&self.objective) {
            // round-off level reduced costs count as zero
            let r = &if r.abs() <= 1e-9 * (1.0 + c.abs()) { 0.0 } else { *r };
            let term = if *r > 0.0 {
                r * hi
            } else if *r < 0.0 {
                r * lo
            } else {
                0.0
            };
            if term.is_nan() {
                continue;
            }
            total += term;
        }
        total
    }

    /// Plain-text dump: one `section,index,column,value` line per entry.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "section,index,column,value")?;
        writeln!(w, "offset,0,,{}", self.offset)?;
        for (j, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                writeln!(w, "objective,0,{j},{c}")?;
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                writeln!(w, "row,{i},{j},{a}")?;
            }
            writeln!(w, "rhs,{i},,{}", row.rhs)?;
        }
        for (j, (lo, hi)) in self.bounds.iter().enumerate() {
            writeln!(w, "lower,{j},{j},{lo}")?;
            writeln!(w, "upper,{j},{j},{hi}")?;
        }
        Ok(())
    }
}

/// How an original variable maps onto a non-negative internal one.
#[derive(Debug, Clone, Copy)]
enum Transform {
    /// `x = lo + x'`
    Shift(f64),
    /// `x = hi - x'`
    Mirror(f64),
    /// `x = x'[pos] - x'[neg]`
    Split(usize),
}

struct Tableau {
    m: usize,
    cols: usize,
    /// Row-major `m x cols` block of `B^-1 A`.
    a: Vec<f64>,
    values: Vec<f64>,
    basis: Vec<usize>,
    at_upper: Vec<bool>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    reduced: Vec<f64>,
    iterations: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.cols + j]
    }

    fn recompute_reduced(&mut self) {
        let mut d = self.cost.clone();
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.a[i * self.cols..(i + 1) * self.cols];
                for (dj, aij) in d.iter_mut().zip(row) {
                    *dj -= cb * aij;
                }
            }
        }
        for &b in &self.basis {
            d[b] = 0.0;
        }
        self.reduced = d;
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let cols = self.cols;
        let p = self.at(r, q);
        {
            let row = &mut self.a[r * cols..(r + 1) * cols];
            for v in row.iter_mut() {
                *v /= p;
            }
        }
        let pivot_row: Vec<f64> = self.a[r * cols..(r + 1) * cols].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.a[i * cols + q];
            if f != 0.0 {
                let row = &mut self.a[i * cols..(i + 1) * cols];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[q] = 0.0;
            }
        }
        let dq = self.reduced[q];
        if dq != 0.0 {
            for (d, pv) in self.reduced.iter_mut().zip(&pivot_row) {
                *d -= dq * pv;
            }
        }
        self.reduced[q] = 0.0;
        self.basis[r] = q;
    }

    /// Primal simplex from a feasible basis. `eligible` filters entering columns.
    fn optimize(&mut self, eligible: &dyn Fn(usize) -> bool, max_iter: usize) -> Outcome {
        let mut degenerate = 0usize;
        let mut in_basis = vec![false; self.cols];
        for &b in &self.basis {
            in_basis[b] = true;
        }
        loop {
            if self.iterations >= max_iter {
                // Bland's rule cannot cycle; this guards only against numerical trouble.
                return Outcome::Optimal;
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let mut entering = None;
            let mut best = 0.0;
            for j in 0..self.cols {
                if in_basis[j] || !eligible(j) || self.upper[j] <= 0.0 {
                    continue;
                }
                let d = self.reduced[j];
                let score = if self.at_upper[j] { -d } else { d };
                if score > OPT_TOL {
                    if bland {
                        entering = Some(j);
                        break;
                    }
                    if score > best {
                        best = score;
                        entering = Some(j);
                    }
                }
            }
            let Some(q) = entering else {
                return Outcome::Optimal;
            };
            self.iterations += 1;
            // +1 when x_q increases from its lower bound, -1 when it decreases from upper
            let dir = if self.at_upper[q] { -1.0 } else { 1.0 };

            let mut step = self.upper[q];
            let mut leave: Option<(usize, bool)> = None;
            let mut leave_alpha = 0.0f64;
            for i in 0..self.m {
                let alpha = self.at(i, q);
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let rate = -dir * alpha;
                let b = self.basis[i];
                let (limit, to_upper) = if rate < 0.0 {
                    ((self.values[i].max(0.0)) / -rate, false)
                } else if self.upper[b].is_finite() {
                    (((self.upper[b] - self.values[i]).max(0.0)) / rate, true)
                } else {
                    continue;
                };
                let tie = (limit - step).abs() <= 1e-12 * (1.0 + step.abs());
                let better = match leave {
                    None => limit < step || (tie && step.is_finite()),
                    Some((li, _)) => {
                        if tie {
                            if bland {
                                b < self.basis[li]
                            } else {
                                alpha.abs() > leave_alpha
                            }
                        } else {
                            limit < step
                        }
                    }
                };
                if better {
                    step = limit;
                    leave = Some((i, to_upper));
                    leave_alpha = alpha.abs();
                }
            }
            if !step.is_finite() {
                return Outcome::Unbounded;
            }
            if step <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            for i in 0..self.m {
                let alpha = self.at(i, q);
                if alpha != 0.0 {
                    self.values[i] -= dir * alpha * step;
                }
            }
            match leave {
                None => {
                    // bound flip
                    self.at_upper[q] = !self.at_upper[q];
                }
                Some((r, to_upper)) => {
                    let entering_value = if dir > 0.0 { step } else { self.upper[q] - step };
                    let b = self.basis[r];
                    in_basis[b] = false;
                    in_basis[q] = true;
                    self.at_upper[b] = to_upper;
                    self.at_upper[q] = false;
                    self.pivot(r, q);
                    self.values[r] = entering_value;
                }
            }
        }
    }
}

/// Solves `p` exactly (up to floating point) with a two-phase bounded simplex.
/// Pricing is largest reduced cost with least-index ties, falling back to
/// Bland's rule on degenerate stalls; results are deterministic.
pub fn solve_lp(p: &LpProblem) -> LpSolution {
    let n = p.num_vars();
    let infeasible = |iterations| LpSolution {
        status: LpStatus::Infeasible,
        objective_value: f64::NAN,
        x_values: vec![],
        duals: vec![],
        iterations,
    };
    if p.bounds.iter().any(|&(lo, hi)| lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY)
        || p.rows.iter().any(|r| r.rhs.is_nan())
    {
        return infeasible(0);
    }

    // internal columns: structural, then slacks, then artificials
    let mut transforms = Vec::with_capacity(n);
    let mut internal_upper = Vec::new();
    let mut internal_cost = Vec::new();
    for (j, &(lo, hi)) in p.bounds.iter().enumerate() {
        let c = p.objective[j];
        if lo.is_finite() {
            transforms.push(Transform::Shift(lo));
            internal_upper.push(hi - lo);
            internal_cost.push(c);
        } else if hi.is_finite() {
            transforms.push(Transform::Mirror(hi));
            internal_upper.push(f64::INFINITY);
            internal_cost.push(-c);
        } else {
            transforms.push(Transform::Split(internal_upper.len()));
            internal_upper.push(f64::INFINITY);
            internal_cost.push(c);
            internal_upper.push(f64::INFINITY);
            internal_cost.push(-c);
        }
    }
    let n_struct = internal_upper.len();
    let m = p.rows.len();

    // row data in internal coordinates
    let mut dense = vec![0.0; m * n_struct];
    let mut rhs = vec![0.0; m];
    for (i, row) in p.rows.iter().enumerate() {
        let mut b = row.rhs;
        for &(j, a) in &row.coeffs {
            match transforms[j] {
                Transform::Shift(lo) => {
                    dense[i * n_struct + col_of(&transforms, j)] += a;
                    b -= a * lo;
                }
                Transform::Mirror(hi) => {
                    dense[i * n_struct + col_of(&transforms, j)] -= a;
                    b -= a * hi;
                }
                Transform::Split(pos) => {
                    dense[i * n_struct + pos] += a;
                    dense[i * n_struct + pos + 1] -= a;
                }
            }
        }
        rhs[i] = b;
    }
    let negated: Vec<bool> = rhs.iter().map(|&b| b < 0.0).collect();
    let n_art = negated.iter().filter(|&&x| x).count();
    let cols = n_struct + m + n_art;
    let mut t = Tableau {
        m,
        cols,
        a: vec![0.0; m * cols],
        values: vec![0.0; m],
        basis: vec![0; m],
        at_upper: vec![false; cols],
        upper: vec![f64::INFINITY; cols],
        cost: vec![0.0; cols],
        reduced: vec![0.0; cols],
        iterations: 0,
    };
    t.upper[..n_struct].copy_from_slice(&internal_upper);
    let mut art = n_struct + m;
    for i in 0..m {
        let sign = if negated[i] { -1.0 } else { 1.0 };
        for j in 0..n_struct {
            t.a[i * cols + j] = sign * dense[i * n_struct + j];
        }
        t.a[i * cols + n_struct + i] = sign;
        t.values[i] = sign * rhs[i];
        if negated[i] {
            t.a[i * cols + art] = 1.0;
            t.basis[i] = art;
            art += 1;
        } else {
            t.basis[i] = n_struct + i;
        }
    }
    let max_iter = 50 * (cols + m) + 10_000;

    if n_art > 0 {
        for c in t.cost[n_struct + m..].iter_mut() {
            *c = -1.0;
        }
        t.recompute_reduced();
        t.optimize(&|_| true, max_iter);
        let infeasibility: f64 = (0..m)
            .filter(|&i| t.basis[i] >= n_struct + m)
            .map(|i| t.values[i])
            .sum();
        let scale = 1.0 + rhs.iter().map(|b| b.abs()).fold(0.0, f64::max);
        if infeasibility > FEAS_TOL * scale {
            return infeasible(t.iterations);
        }
        // drive remaining artificials out where possible, then fix them at zero
        for i in 0..m {
            if t.basis[i] >= n_struct + m {
                if let Some(q) = (0..n_struct + m)
                    .filter(|&j| !t.basis.contains(&j))
                    .find(|&j| t.at(i, j).abs() > 1e-7)
                {
                    let entering_value = if t.at_upper[q] { t.upper[q] } else { 0.0 };
                    let old = t.basis[i];
                    t.pivot(i, q);
                    t.values[i] = entering_value;
                    t.at_upper[old] = false;
                }
            }
        }
        for j in n_struct + m..cols {
            t.upper[j] = 0.0;
            t.at_upper[j] = false;
        }
    }
    for c in t.cost.iter_mut() {
        *c = 0.0;
    }
    t.cost[..n_struct].copy_from_slice(&internal_cost);
    t.recompute_reduced();
    let first_art = n_struct + m;
    if let Outcome::Unbounded = t.optimize(&|j| j < first_art, max_iter) {
        return LpSolution {
            status: LpStatus::Unbounded,
            objective_value: f64::INFINITY,
            x_values: vec![],
            duals: vec![],
            iterations: t.iterations,
        };
    }

    let mut internal = vec![0.0; cols];
    for j in 0..cols {
        if t.at_upper[j] {
            internal[j] = t.upper[j];
        }
    }
    for (i, &b) in t.basis.iter().enumerate() {
        internal[b] = t.values[i];
    }
    let x_values: Vec<f64> = (0..n)
        .map(|j| {
            let v = match transforms[j] {
                Transform::Shift(lo) => lo + internal[col_of(&transforms, j)],
                Transform::Mirror(hi) => hi - internal[col_of(&transforms, j)],
                Transform::Split(pos) => internal[pos] - internal[pos + 1],
            };
            let (lo, hi) = p.bounds[j];
            v.clamp(lo, hi)
        })
        .collect();
    let duals: Vec<f64> = (0..m).map(|i| (-t.reduced[n_struct + i]).max(0.0)).collect();
    LpSolution {
        status: LpStatus::Optimal,
        objective_value: p.evaluate(&x_values),
        x_values,
        duals,
        iterations: t.iterations,
    }
}

/// Internal column of a shifted or mirrored variable.
fn col_of(transforms: &[Transform], j: usize) -> usize {
    // split variables take two internal columns, everything else one
    transforms[..j]
        .iter()
        .map(|t| if matches!(t, Transform::Split(_)) { 2 } else { 1 })
        .sum()
}

/// Allocation column of the relaxation together with the affine pieces
/// `(a, b)` whose minimum bounds its utility.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ColumnSpec {
    pub user: usize,
    pub slot: usize,
    pub lo: f64,
    pub hi: f64,
    pub pieces: Vec<(f64, f64)>,
}

pub(crate) fn assemble_relaxation(scenario: &Scenario, columns: &[ColumnSpec]) -> LpProblem {
    let horizon = scenario.horizon();
    let mut p = LpProblem::new(0);
    let mut by_slot: Vec<Vec<usize>> = vec![Vec::new(); horizon];
    let mut pending = Vec::with_capacity(columns.len());
    for c in columns {
        let area = scenario.area_of(c.user);
        let x = p.add_var(0.0, c.lo, c.hi);
        let beta = p.add_var(1.0, 0.0, f64::INFINITY);
        by_slot[c.slot].push(x);
        p.var_index.x.insert((c.user, area, c.slot), x);
        p.var_index.beta.insert((c.user, area, c.slot), beta);
        pending.push((c, area, x, beta));
    }
    let smax = scenario.params.smax_mbps;
    for t in 0..horizon {
        let coeffs = scenario
            .window(t)
            .flat_map(|tp| by_slot[tp].iter().map(|&x| (x, 1.0)))
            .collect();
        p.add_row(coeffs, smax);
    }
    for (c, area, x, beta) in pending {
        let rows = c
            .pieces
            .iter()
            .map(|&(a, b)| {
                if a == 0.0 {
                    p.add_row(vec![(beta, 1.0)], b)
                } else {
                    p.add_row(vec![(beta, 1.0), (x, -a)], b)
                }
            })
            .collect();
        p.var_index.columns.push(EnvelopeColumn {
            user: c.user,
            area,
            slot: c.slot,
            x,
            beta,
            rows,
        });
    }
    p
}

/// Columns of the relaxation: one per (user, slot) within the user's
/// deadline whose (area, slot) pair is not forbidden.
pub(crate) fn relaxation_columns(
    scenario: &Scenario,
    envelopes: &[EnvelopePiece],
    forbidden: &BTreeSet<(usize, usize)>,
) -> Vec<ColumnSpec> {
    let smax = scenario.params.smax_mbps;
    let mut columns = Vec::new();
    for (k, h) in scenario.households.iter().enumerate() {
        let n = scenario.area_of(k);
        let env = &envelopes[k];
        for t in 0..h.deadline().min(scenario.horizon()) {
            if forbidden.contains(&(n, t)) {
                continue;
            }
            columns.push(ColumnSpec {
                user: k,
                slot: t,
                lo: 0.0,
                hi: smax,
                pieces: vec![(env.a, env.b), (0.0, env.cap)],
            });
        }
    }
    columns
}

/// The envelope relaxation: maximize the sum of auxiliaries `beta` with
/// `beta <= a x + b`, `beta <= tau`, one sliding-window capacity row per slot
/// and `0 <= x <= S_max`. `forbidden` holds `(area, slot)` pairs (0-based)
/// whose columns are dropped; columns past a user's deadline never exist.
pub fn build_relaxation(
    scenario: &Scenario,
    envelopes: &[EnvelopePiece],
    forbidden: &BTreeSet<(usize, usize)>,
) -> LpProblem {
    assemble_relaxation(scenario, &relaxation_columns(scenario, envelopes, forbidden))
}

/// Replaces every auxiliary bounded by a single sloped line (plus flat caps)
/// by its line: the allocation column takes the line's slope as objective,
/// its intercept moves to the offset and the cap becomes an upper bound on
/// the allocation. Exact when the allocation's other rows are `<=` rows with
/// non-negative coefficients, which holds for relaxations built here.
fn reduce_envelopes(p: &LpProblem) -> (LpProblem, Vec<Option<usize>>) {
    let mut reducible = vec![false; p.var_index.columns.len()];
    let mut dropped_rows = vec![false; p.rows.len()];
    let mut dropped_vars = vec![false; p.num_vars()];
    let mut lines = vec![(0.0, 0.0, f64::INFINITY); p.var_index.columns.len()];
    for (ci, col) in p.var_index.columns.iter().enumerate() {
        let mut slope_rows = 0;
        let mut line = (0.0, 0.0);
        let mut cap = f64::INFINITY;
        for &r in &col.rows {
            let row = &p.rows[r];
            let a = row
                .coeffs
                .iter()
                .find(|(j, _)| *j == col.x)
                .map_or(0.0, |(_, a)| -a);
            if a == 0.0 {
                cap = cap.min(row.rhs);
            } else {
                slope_rows += 1;
                line = (a, row.rhs);
            }
        }
        if slope_rows == 1 && line.0 > 0.0 && p.objective[col.beta] > 0.0 {
            reducible[ci] = true;
            lines[ci] = (line.0, line.1, cap);
            dropped_vars[col.beta] = true;
            for &r in &col.rows {
                dropped_rows[r] = true;
            }
        }
    }
    let mut map = vec![None; p.num_vars()];
    let mut q = LpProblem::new(0);
    q.offset = p.offset;
    for j in 0..p.num_vars() {
        if !dropped_vars[j] {
            let (lo, hi) = p.bounds[j];
            map[j] = Some(q.add_var(p.objective[j], lo, hi));
        }
    }
    for (ci, col) in p.var_index.columns.iter().enumerate() {
        if reducible[ci] {
            let (a, b, cap) = lines[ci];
            let c = p.objective[col.beta];
            let xj = map[col.x].expect("allocation columns are kept");
            let saturation = (cap - b) / a;
            if saturation <= q.bounds[xj].0 {
                // the cap binds over the whole box
                q.offset += c * cap;
            } else {
                q.objective[xj] += c * a;
                q.offset += c * b;
                q.bounds[xj].1 = q.bounds[xj].1.min(saturation);
            }
        }
    }
    for (i, row) in p.rows.iter().enumerate() {
        if !dropped_rows[i] {
            let coeffs = row
                .coeffs
                .iter()
                .map(|&(j, a)| (map[j].expect("kept row references kept column"), a))
                .collect();
            q.add_row(coeffs, row.rhs);
        }
    }
    (q, map)
}

/// Solves a relaxation built by this module, eliminating single-line
/// envelopes first. The returned solution is expressed in the columns and
/// rows of `p`, with auxiliaries set to their envelope values.
pub fn solve_relaxation(p: &LpProblem) -> LpSolution {
    let (q, map) = reduce_envelopes(p);
    let sol = solve_lp(&q);
    if sol.status != LpStatus::Optimal {
        return LpSolution {
            status: sol.status,
            objective_value: sol.objective_value,
            x_values: vec![],
            duals: vec![],
            iterations: sol.iterations,
        };
    }
    let mut x = vec![0.0; p.num_vars()];
    for (j, m) in map.iter().enumerate() {
        if let Some(qj) = m {
            x[j] = sol.x_values[*qj];
        }
    }
    // reduced-row duals carry over; reduced auxiliaries get the multipliers
    // that make their envelope rows complementary
    let mut duals = vec![0.0; p.rows.len()];
    let mut kept = 0;
    let mut kept_rows = vec![None; p.rows.len()];
    let reduced_cols: BTreeSet<usize> = p
        .var_index
        .columns
        .iter()
        .filter(|c| map[c.beta].is_none())
        .flat_map(|c| c.rows.iter().copied())
        .collect();
    for i in 0..p.rows.len() {
        if !reduced_cols.contains(&i) {
            kept_rows[i] = Some(kept);
            duals[i] = sol.duals[kept];
            kept += 1;
        }
    }
    for col in &p.var_index.columns {
        if map[col.beta].is_some() {
            continue;
        }
        let xv = x[col.x];
        let mut best_line: Option<(usize, f64, f64)> = None;
        let mut cap_row: Option<(usize, f64)> = None;
        for &r in &col.rows {
            let row = &p.rows[r];
            let a = row
                .coeffs
                .iter()
                .find(|(j, _)| *j == col.x)
                .map_or(0.0, |(_, a)| -a);
            if a == 0.0 {
                if cap_row.is_none_or(|(_, b)| row.rhs < b) {
                    cap_row = Some((r, row.rhs));
                }
            } else {
                best_line = Some((r, a, row.rhs));
            }
        }
        let Some((line_row, a, b)) = best_line else { continue };
        let cap = cap_row.map_or(f64::INFINITY, |(_, c)| c);
        x[col.beta] = (a * xv + b).min(cap);
        let c_beta = p.objective[col.beta];
        // price of capacity consumed by this allocation column
        let usage: f64 = p
            .rows
            .iter()
            .enumerate()
            .filter(|(i, _)| kept_rows[*i].is_some())
            .filter_map(|(i, row)| {
                row.coeffs
                    .iter()
                    .find(|(j, _)| *j == col.x)
                    .map(|(_, coef)| coef * duals[i])
            })
            .sum();
        let reduced = c_beta * a - usage;
        if (cap - b) / a <= p.bounds[col.x].0 {
            duals[line_row] = 0.0;
            if let Some((r, _)) = cap_row {
                duals[r] = c_beta;
            }
        } else if reduced > 0.0 && cap.is_finite() {
            let y_line = (usage / a).clamp(0.0, c_beta);
            duals[line_row] = y_line;
            if let Some((r, _)) = cap_row {
                duals[r] = c_beta - y_line;
            }
        } else {
            duals[line_row] = c_beta;
        }
    }
    LpSolution {
        status: LpStatus::Optimal,
        objective_value: p.evaluate(&x),
        x_values: x,
        duals,
        iterations: sol.iterations,
    }
}

/// Relaxation solution mapped back to per-(user, slot) allocations.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationSolution {
    pub value: f64,
    /// `x[k][t]`; zero for columns not present in the relaxation.
    pub x: Vec<Vec<f64>>,
    /// Auxiliary (envelope) value per `[k][t]`; zero for absent columns.
    pub beta: Vec<Vec<f64>>,
    pub iterations: usize,
}

pub(crate) fn solve_columns(scenario: &Scenario, columns: &[ColumnSpec]) -> Result<RelaxationSolution> {
    try_solve_columns(scenario, columns)?
        .ok_or_else(|| Error::Solver("relaxation is infeasible".into()))
}

/// `None` when the column boxes make the relaxation infeasible.
pub(crate) fn try_solve_columns(
    scenario: &Scenario,
    columns: &[ColumnSpec],
) -> Result<Option<RelaxationSolution>> {
    let p = assemble_relaxation(scenario, columns);
    let sol = solve_relaxation(&p);
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Ok(None),
        LpStatus::Unbounded => return Err(Error::Solver("relaxation is unbounded".into())),
    }
    let mut x = vec![vec![0.0; scenario.horizon()]; scenario.num_users()];
    let mut beta = x.clone();
    for col in &p.var_index.columns {
        x[col.user][col.slot] = sol.x_values[col.x];
        beta[col.user][col.slot] = sol.x_values[col.beta];
    }
    Ok(Some(RelaxationSolution {
        value: sol.objective_value,
        x,
        beta,
        iterations: sol.iterations,
    }))
}

pub fn solve_forbidden(
    scenario: &Scenario,
    envelopes: &[EnvelopePiece],
    forbidden: &BTreeSet<(usize, usize)>,
) -> Result<RelaxationSolution> {
    solve_columns(scenario, &relaxation_columns(scenario, envelopes, forbidden))
}

/// Optimal value of the unrestricted envelope relaxation; an upper bound on
/// the exact-sigmoid optimum.
pub fn relaxation_upper_bound(scenario: &Scenario) -> Result<f64> {
    let envelopes = build_envelopes(scenario)?;
    Ok(solve_forbidden(scenario, &envelopes, &BTreeSet::new())?.value)
}
