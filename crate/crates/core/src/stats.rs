//! Pearson and Spearman correlation with two-tailed t-approximation p-values.

use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::report::{json_num, sig};
use crate::scenario::{Attribute, Scenario};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Spearman,
    Pearson,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Spearman => "spearman",
            Method::Pearson => "pearson",
        }
    }
}

/// Two-tailed p-value of correlation `r` over `n` pairs.
pub fn p_value(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t2 = r * r * df / (1.0 - r * r);
    // P(|T| > t) = I_{df / (df + t^2)}(df / 2, 1 / 2)
    beta_reg(df / 2.0, 0.5, df / (df + t2)).clamp(0.0, 1.0)
}

fn check(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Argument(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::Argument(format!("need at least 3 pairs, got {}", xs.len())));
    }
    Ok(())
}

fn coefficient(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Product-moment correlation and its p-value.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    check(xs, ys)?;
    let r = coefficient(xs, ys)?;
    Ok((r, p_value(r, xs.len())))
}

/// 1-based ranks, ties sharing the average of their positions.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    check(xs, ys)?;
    let r = coefficient(&ranks(xs), &ranks(ys))?;
    Ok((r, p_value(r, xs.len())))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationEntry {
    pub row: Attribute,
    pub col: Attribute,
    pub method: Method,
    pub n: usize,
    /// `Err` carries the reason the coefficient is undefined.
    pub result: std::result::Result<(f64, f64), String>,
}

impl CorrelationEntry {
    pub fn significant(&self) -> bool {
        matches!(self.result, Ok((_, p)) if p < SIGNIFICANCE_LEVEL)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub pairs: Vec<CorrelationEntry>,
}

pub const DEFAULT_ROWS: [Attribute; 4] = [
    Attribute::Hardship,
    Attribute::Perception,
    Attribute::Tolerance,
    Attribute::Demand,
];
pub const DEFAULT_COLS: [Attribute; 3] = [Attribute::Income, Attribute::Education, Attribute::Race];

/// Both methods for every (row, col) attribute pair; a cell that cannot be
/// computed records its error without affecting the others.
pub fn correlation_table(scenario: &Scenario, rows: &[Attribute], cols: &[Attribute]) -> CorrelationReport {
    let column = |a: Attribute| -> Vec<f64> { scenario.households.iter().map(|h| a.value(h)).collect() };
    let mut pairs = Vec::new();
    for method in [Method::Spearman, Method::Pearson] {
        for &row in rows {
            for &col in cols {
                let (xs, ys) = (column(row), column(col));
                let result = match method {
                    Method::Spearman => spearman(&xs, &ys),
                    Method::Pearson => pearson(&xs, &ys),
                };
                pairs.push(CorrelationEntry {
                    row,
                    col,
                    method,
                    n: xs.len(),
                    result: result.map_err(|e| e.to_string()),
                });
            }
        }
    }
    CorrelationReport { pairs }
}

impl CorrelationReport {
    pub fn get(&self, method: Method, row: Attribute, col: Attribute) -> Option<&CorrelationEntry> {
        self.pairs
            .iter()
            .find(|e| e.method == method && e.row == row && e.col == col)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "method,row,col,coefficient,p_value,significant,n,error")?;
        for e in &self.pairs {
            let (c, p, err) = match &e.result {
                Ok((c, p)) => (sig(*c), sig(*p), String::new()),
                Err(msg) => (String::new(), String::new(), msg.replace(',', ";")),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                e.method.name(),
                e.row,
                e.col,
                c,
                p,
                e.significant(),
                e.n,
                err
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.pairs
                .iter()
                .map(|e| {
                    let (c, p, err) = match &e.result {
                        Ok((c, p)) => (json_num(*c), json_num(*p), Value::Null),
                        Err(msg) => (Value::Null, Value::Null, Value::String(msg.clone())),
                    };
                    json!({
                        "method": e.method.name(),
                        "row": e.row.name(),
                        "col": e.col.name(),
                        "coefficient": c,
                        "p_value": p,
                        "significant": e.significant(),
                        "n": e.n,
                        "error": err,
                    })
                })
                .collect(),
        )
    }
}
