//! Problem instances: household profiles grouped into areas, the global
//! resource parameters, attribute coding, CSV ingestion and a seedable
//! synthetic generator.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INCOME_CODES: [u8; 3] = [1, 3, 5];
pub const RACE_CODES: [u8; 2] = [1, 3];
pub const EDUCATION_CODES: [u8; 5] = [1, 2, 4, 5, 7];
pub const DEMAND_LEVELS_MBPS: [f64; 4] = [1.0, 10.0, 500.0, 1000.0];
pub const HARDSHIP_CODES: [u8; 4] = [1, 2, 3, 4];
pub const PERCEPTION_CODES: [u8; 5] = [1, 2, 3, 4, 5];

/// Longest outage tolerance observed in the survey population.
pub const MAX_SURVEY_TOLERANCE_DAYS: u32 = 14;

const INCOME_LABELS: [(&str, u8); 3] = [
    ("Above $100,000", 1),
    ("$49,999 - $99,999", 3),
    ("Less than $49,999", 5),
];
const RACE_LABELS: [(&str, u8); 2] = [("White", 1), ("Non-White", 3)];
const EDUCATION_LABELS: [(&str, u8); 5] = [
    ("Graduate school", 1),
    ("Bachelor", 2),
    ("Some college", 4),
    ("High school", 5),
    ("Less than high school", 7),
];
const DEMAND_LABELS: [(&str, f64); 4] = [
    ("Communicate with family", 1.0),
    ("Use social media", 10.0),
    ("Remote work or education", 500.0),
    ("Streaming entertainment", 1000.0),
];
const HARDSHIP_LABELS: [(&str, u8); 4] = [
    ("A little", 1),
    ("A moderate amount", 2),
    ("A lot", 3),
    ("A great deal", 4),
];
const PERCEPTION_LABELS: [(&str, u8); 5] = [
    ("Not important", 1),
    ("Slightly important", 2),
    ("Moderately important", 3),
    ("Very important", 4),
    ("Extremely important", 5),
];

pub const HOUSEHOLD_CSV_HEADER: [&str; 9] = [
    "id",
    "area_id",
    "income_code",
    "race_code",
    "education_code",
    "demand_mbps",
    "tolerance_days",
    "hardship_code",
    "perception_code",
];

/// Which sociodemographic code supplies a household's utility weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauSource {
    Income,
    Race,
    Education,
}

impl FromStr for TauSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "income" => Ok(TauSource::Income),
            "race" => Ok(TauSource::Race),
            "education" => Ok(TauSource::Education),
            other => Err(Error::Argument(format!(
                "unknown tau source {other:?} (expected income, race or education)"
            ))),
        }
    }
}

impl fmt::Display for TauSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TauSource::Income => "income",
            TauSource::Race => "race",
            TauSource::Education => "education",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdProfile {
    pub id: String,
    pub area_id: u32,
    pub income_code: u8,
    pub race_code: u8,
    pub education_code: u8,
    pub demand_mbps: f64,
    pub tolerance_days: u32,
    pub hardship_code: u8,
    pub perception_code: u8,
}

impl HouseholdProfile {
    /// Deadline as a slot count: the household gets utility only from
    /// service at slots `1..=deadline()`.
    pub fn deadline(&self) -> usize {
        self.tolerance_days as usize
    }

    fn check_codes(&self) -> std::result::Result<(), String> {
        let check = |name: &str, code: u8, set: &[u8]| {
            if set.contains(&code) {
                Ok(())
            } else {
                Err(format!(
                    "household {}: {name} {code} not in {set:?}",
                    self.id
                ))
            }
        };
        check("income_code", self.income_code, &INCOME_CODES)?;
        check("race_code", self.race_code, &RACE_CODES)?;
        check("education_code", self.education_code, &EDUCATION_CODES)?;
        check("hardship_code", self.hardship_code, &HARDSHIP_CODES)?;
        check("perception_code", self.perception_code, &PERCEPTION_CODES)?;
        if !(self.demand_mbps.is_finite() && self.demand_mbps > 0.0) {
            return Err(format!(
                "household {}: demand_mbps must be positive, got {}",
                self.id, self.demand_mbps
            ));
        }
        if self.tolerance_days < 1 {
            return Err(format!("household {}: tolerance_days must be >= 1", self.id));
        }
        Ok(())
    }
}

/// Coded value of the chosen attribute, used raw as the utility weight.
pub fn tau_of(h: &HouseholdProfile, source: TauSource) -> f64 {
    f64::from(match source {
        TauSource::Income => h.income_code,
        TauSource::Race => h.race_code,
        TauSource::Education => h.education_code,
    })
}

/// A per-household attribute usable for grouping and correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Income,
    Race,
    Education,
    Demand,
    Tolerance,
    Hardship,
    Perception,
}

impl Attribute {
    pub const ALL: [Attribute; 7] = [
        Attribute::Income,
        Attribute::Race,
        Attribute::Education,
        Attribute::Demand,
        Attribute::Tolerance,
        Attribute::Hardship,
        Attribute::Perception,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Income => "income",
            Attribute::Race => "race",
            Attribute::Education => "education",
            Attribute::Demand => "demand",
            Attribute::Tolerance => "tolerance",
            Attribute::Hardship => "hardship",
            Attribute::Perception => "perception",
        }
    }

    pub fn value(self, h: &HouseholdProfile) -> f64 {
        match self {
            Attribute::Income => f64::from(h.income_code),
            Attribute::Race => f64::from(h.race_code),
            Attribute::Education => f64::from(h.education_code),
            Attribute::Demand => h.demand_mbps,
            Attribute::Tolerance => f64::from(h.tolerance_days),
            Attribute::Hardship => f64::from(h.hardship_code),
            Attribute::Perception => f64::from(h.perception_code),
        }
    }
}

impl From<TauSource> for Attribute {
    fn from(t: TauSource) -> Self {
        match t {
            TauSource::Income => Attribute::Income,
            TauSource::Race => Attribute::Race,
            TauSource::Education => Attribute::Education,
        }
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| Error::Argument(format!("unknown attribute {s:?}")))
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub area_id: u32,
    /// Indices into [`Scenario::households`], in input order.
    pub household_ids: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Number of slots `T`.
    pub horizon: usize,
    pub smax_mbps: f64,
    /// Freeze-out: slots a deployed resource stays unavailable after use.
    pub delta: usize,
    /// Sigmoid steepness per Mbps.
    pub theta: f64,
    pub tau_source: TauSource,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            horizon: 15,
            smax_mbps: 10_000.0,
            delta: 1,
            theta: 10.0,
            tau_source: TauSource::Race,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Validation("T must be >= 1".into()));
        }
        if !(self.smax_mbps.is_finite() && self.smax_mbps >= 0.0) {
            return Err(Error::Validation(format!(
                "S_max must be finite and non-negative, got {}",
                self.smax_mbps
            )));
        }
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(Error::Validation(format!(
                "theta must be positive, got {}",
                self.theta
            )));
        }
        Ok(())
    }

    /// Parses the flat `key = value` parameter file. Recognized keys are
    /// `T`, `smax_gbps`, `delta`, `theta` and `tau_source`; absent keys keep
    /// their defaults. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Params> {
        let mut params = Params::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::parse(line_no, format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "T" => params.horizon = parse_int(value, line_no, "T")? as usize,
                "smax_gbps" => params.smax_mbps = parse_decimal(value, line_no, "smax_gbps")? * 1000.0,
                "delta" => params.delta = parse_int(value, line_no, "delta")? as usize,
                "theta" => params.theta = parse_decimal(value, line_no, "theta")?,
                "tau_source" => {
                    params.tau_source = value
                        .parse()
                        .map_err(|e: Error| Error::parse(line_no, e.to_string()))?
                }
                other => return Err(Error::parse(line_no, format!("unknown key {other:?}"))),
            }
        }
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Params> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Params::parse(&text)
    }

    pub fn to_file_string(&self) -> String {
        format!(
            "T = {}\nsmax_gbps = {}\ndelta = {}\ntheta = {}\ntau_source = {}\n",
            self.horizon,
            self.smax_mbps / 1000.0,
            self.delta,
            self.theta,
            self.tau_source
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Sorted by `area_id`.
    pub areas: Vec<Area>,
    pub households: Vec<HouseholdProfile>,
    pub params: Params,
    /// Area index (into `areas`) of each household.
    area_of: Vec<usize>,
}

impl Scenario {
    /// Validates households against the parameters and groups them by area.
    pub fn new(households: Vec<HouseholdProfile>, params: Params) -> Result<Scenario> {
        params.validate()?;
        if households.is_empty() {
            return Err(Error::Validation("no households".into()));
        }
        let mut seen = BTreeMap::new();
        for h in &households {
            h.check_codes().map_err(Error::Validation)?;
            if h.deadline() > params.horizon {
                return Err(Error::Validation(format!(
                    "household {}: tolerance_days {} exceeds T = {}",
                    h.id, h.tolerance_days, params.horizon
                )));
            }
            if seen.insert(h.id.as_str(), ()).is_some() {
                return Err(Error::Validation(format!("duplicate household id {:?}", h.id)));
            }
        }
        Ok(Self::group(households, params))
    }

    /// A scenario with no households; useful only as a degenerate input to
    /// the objective and metric functions.
    pub fn empty(params: Params) -> Scenario {
        Self::group(Vec::new(), params)
    }

    fn group(households: Vec<HouseholdProfile>, params: Params) -> Scenario {
        let mut by_area: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (k, h) in households.iter().enumerate() {
            by_area.entry(h.area_id).or_default().push(k);
        }
        let mut area_of = vec![0; households.len()];
        let areas: Vec<Area> = by_area
            .into_iter()
            .enumerate()
            .map(|(n, (area_id, household_ids))| {
                for &k in &household_ids {
                    area_of[k] = n;
                }
                Area {
                    area_id,
                    household_ids,
                }
            })
            .collect();
        Scenario {
            areas,
            households,
            params,
            area_of,
        }
    }

    /// Same households under different global parameters.
    pub fn with_params(&self, params: Params) -> Result<Scenario> {
        Scenario::new(self.households.clone(), params)
    }

    pub fn num_areas(&self) -> usize {
        self.areas.len()
    }

    pub fn num_users(&self) -> usize {
        self.households.len()
    }

    pub fn horizon(&self) -> usize {
        self.params.horizon
    }

    pub fn area_of(&self, user: usize) -> usize {
        self.area_of[user]
    }

    pub fn tau(&self, user: usize) -> f64 {
        tau_of(&self.households[user], self.params.tau_source)
    }

    pub fn area_index(&self, area_id: u32) -> Option<usize> {
        self.areas
            .binary_search_by_key(&area_id, |a| a.area_id)
            .ok()
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.households.iter().position(|h| h.id == id)
    }

    /// Slots (0-based, inclusive) whose capacity window contains slot `t`:
    /// resource placed at `t` is locked through `t + delta`.
    pub fn windows_containing(&self, t: usize) -> std::ops::RangeInclusive<usize> {
        t..=(t + self.params.delta).min(self.horizon() - 1)
    }

    /// Slots (0-based, inclusive) covered by the capacity window ending at `t`.
    pub fn window(&self, t: usize) -> std::ops::RangeInclusive<usize> {
        t.saturating_sub(self.params.delta)..=t
    }

    pub fn load(path: &Path, params: Params) -> Result<Scenario> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, params)
    }

    pub fn read_csv<R: Read>(reader: R, params: Params) -> Result<Scenario> {
        Scenario::new(read_households(reader)?, params)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_households(&self.households, writer)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn parse_int(field: &str, line: usize, name: &str) -> Result<u32> {
    let s = field.trim();
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::parse(line, format!("{name}: expected an integer, got {field:?}")));
    }
    s.parse()
        .map_err(|_| Error::parse(line, format!("{name}: integer out of range {field:?}")))
}

/// Plain decimal: optional sign, digits, at most one '.', optional exponent.
/// Rejects thousands separators, decimal commas, `inf` and `NaN`.
fn parse_decimal(field: &str, line: usize, name: &str) -> Result<f64> {
    let s = field.trim();
    let ok = !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'))
        && s.bytes().any(|b| b.is_ascii_digit());
    let value: Option<f64> = if ok { s.parse().ok() } else { None };
    match value {
        Some(v) if v.is_finite() => Ok(v),
        _ => Err(Error::parse(line, format!("{name}: expected a decimal number, got {field:?}"))),
    }
}

fn lookup_label<T: Copy>(labels: &[(&str, T)], field: &str) -> Option<T> {
    labels
        .iter()
        .find(|(label, _)| label.eq_ignore_ascii_case(field.trim()))
        .map(|&(_, v)| v)
}

fn parse_code(field: &str, labels: &[(&str, u8)], line: usize, name: &str) -> Result<u8> {
    if let Some(code) = lookup_label(labels, field) {
        return Ok(code);
    }
    let v = parse_int(field, line, name)?;
    u8::try_from(v).map_err(|_| Error::parse(line, format!("{name}: code out of range {field:?}")))
}

/// A demand cell is a number, a survey label, or several of either
/// separated by `;` (multi-choice answers); the largest rate wins.
fn parse_demand(field: &str, line: usize) -> Result<f64> {
    let mut best: Option<f64> = None;
    for choice in field.split(';') {
        let v = match lookup_label(&DEMAND_LABELS, choice) {
            Some(v) => v,
            None => parse_decimal(choice, line, "demand_mbps")?,
        };
        best = Some(best.map_or(v, |b: f64| b.max(v)));
    }
    best.ok_or_else(|| Error::parse(line, "demand_mbps: empty"))
}

pub fn read_households<R: Read>(reader: R) -> Result<Vec<HouseholdProfile>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Validation("no households".into()));
    }
    let expected: Vec<&str> = HOUSEHOLD_CSV_HEADER.to_vec();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(
            1,
            format!("header must be {:?}", HOUSEHOLD_CSV_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != HOUSEHOLD_CSV_HEADER.len() {
            return Err(Error::parse(
                line,
                format!("expected {} fields, found {}", HOUSEHOLD_CSV_HEADER.len(), rec.len()),
            ));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::parse(line, "id: empty"));
        }
        let tolerance = parse_int(&rec[6], line, "tolerance_days")?;
        out.push(HouseholdProfile {
            id,
            area_id: parse_int(&rec[1], line, "area_id")?,
            income_code: parse_code(&rec[2], &INCOME_LABELS, line, "income_code")?,
            race_code: parse_code(&rec[3], &RACE_LABELS, line, "race_code")?,
            education_code: parse_code(&rec[4], &EDUCATION_LABELS, line, "education_code")?,
            demand_mbps: parse_demand(&rec[5], line)?,
            tolerance_days: tolerance,
            hardship_code: parse_code(&rec[7], &HARDSHIP_LABELS, line, "hardship_code")?,
            perception_code: parse_code(&rec[8], &PERCEPTION_LABELS, line, "perception_code")?,
        });
    }
    Ok(out)
}

pub fn write_households<W: Write>(households: &[HouseholdProfile], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::Validation(format!("csv write failed: {e}"));
    w.write_record(HOUSEHOLD_CSV_HEADER).map_err(to_err)?;
    for h in households {
        w.write_record([
            h.id.clone(),
            h.area_id.to_string(),
            h.income_code.to_string(),
            h.race_code.to_string(),
            h.education_code.to_string(),
            h.demand_mbps.to_string(),
            h.tolerance_days.to_string(),
            h.hardship_code.to_string(),
            h.perception_code.to_string(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io("<households>", e))?;
    Ok(())
}

/// A finite categorical distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical<T> {
    pub values: Vec<T>,
    pub probs: Vec<f64>,
}

impl<T: Copy + PartialEq + fmt::Debug> Categorical<T> {
    pub fn new(values: Vec<T>, probs: Vec<f64>) -> Self {
        Categorical { values, probs }
    }

    pub fn uniform(values: &[T]) -> Self {
        let p = 1.0 / values.len() as f64;
        Categorical {
            values: values.to_vec(),
            probs: vec![p; values.len()],
        }
    }

    pub fn point(value: T) -> Self {
        Categorical {
            values: vec![value],
            probs: vec![1.0],
        }
    }

    fn validate(&self, name: &str, allowed: impl Fn(T) -> bool) -> Result<()> {
        if self.values.is_empty() || self.values.len() != self.probs.len() {
            return Err(Error::Validation(format!(
                "{name}: need one probability per value"
            )));
        }
        if self.probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Validation(format!("{name}: negative or non-finite probability")));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "{name}: probabilities sum to {total}, expected 1"
            )));
        }
        if let Some(bad) = self.values.iter().find(|v| !allowed(**v)) {
            return Err(Error::Validation(format!("{name}: value {bad:?} not allowed")));
        }
        Ok(())
    }

    fn sample(&self, u: f64) -> T {
        let mut acc = 0.0;
        for (v, p) in self.values.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return *v;
            }
        }
        // u landed in the rounding sliver above the last cumulative sum
        *self
            .values
            .iter()
            .zip(&self.probs)
            .rev()
            .find(|(_, p)| **p > 0.0)
            .map(|(v, _)| v)
            .unwrap_or(&self.values[self.values.len() - 1])
    }
}

/// Per-attribute sampling distributions for synthetic households.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub income: Categorical<u8>,
    pub race: Categorical<u8>,
    pub education: Categorical<u8>,
    pub demand: Categorical<f64>,
    pub tolerance: Categorical<u32>,
    pub hardship: Categorical<u8>,
    pub perception: Categorical<u8>,
}

impl Marginals {
    /// Uniform over every code set; tolerance uniform over `1..=min(14, T)`.
    pub fn uniform(horizon: usize) -> Self {
        let tmax = tolerance_cap(horizon);
        let days: Vec<u32> = (1..=tmax).collect();
        Marginals {
            income: Categorical::uniform(&INCOME_CODES),
            race: Categorical::uniform(&RACE_CODES),
            education: Categorical::uniform(&EDUCATION_CODES),
            demand: Categorical::uniform(&DEMAND_LEVELS_MBPS),
            tolerance: Categorical::uniform(&days),
            hardship: Categorical::uniform(&HARDSHIP_CODES),
            perception: Categorical::uniform(&PERCEPTION_CODES),
        }
    }

    /// Survey-like defaults: most tolerances within five days, a long tail
    /// to fourteen, and low-rate demands more common than streaming.
    pub fn survey_like(horizon: usize) -> Self {
        let tmax = tolerance_cap(horizon);
        let days: Vec<u32> = (1..=tmax).collect();
        let weights: Vec<f64> = days
            .iter()
            .map(|&d| if d <= 5 { 6.0 - d as f64 } else { 0.25 })
            .collect();
        let total: f64 = weights.iter().sum();
        Marginals {
            income: Categorical::new(INCOME_CODES.to_vec(), vec![0.3, 0.3, 0.4]),
            race: Categorical::new(RACE_CODES.to_vec(), vec![0.45, 0.55]),
            education: Categorical::new(EDUCATION_CODES.to_vec(), vec![0.2, 0.25, 0.25, 0.2, 0.1]),
            demand: Categorical::new(DEMAND_LEVELS_MBPS.to_vec(), vec![0.4, 0.3, 0.2, 0.1]),
            tolerance: Categorical::new(days, weights.iter().map(|w| w / total).collect()),
            hardship: Categorical::uniform(&HARDSHIP_CODES),
            perception: Categorical::uniform(&PERCEPTION_CODES),
        }
    }

    fn validate(&self, horizon: usize) -> Result<()> {
        let tmax = tolerance_cap(horizon);
        self.income.validate("income", |v| INCOME_CODES.contains(&v))?;
        self.race.validate("race", |v| RACE_CODES.contains(&v))?;
        self.education.validate("education", |v| EDUCATION_CODES.contains(&v))?;
        self.demand.validate("demand", |v| DEMAND_LEVELS_MBPS.contains(&v))?;
        self.tolerance.validate("tolerance", |v| (1..=tmax).contains(&v))?;
        self.hardship.validate("hardship", |v| HARDSHIP_CODES.contains(&v))?;
        self.perception.validate("perception", |v| PERCEPTION_CODES.contains(&v))?;
        Ok(())
    }
}

fn tolerance_cap(horizon: usize) -> u32 {
    MAX_SURVEY_TOLERANCE_DAYS.min(horizon as u32).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_areas: usize,
    /// Inclusive bounds on households per area.
    pub users_per_area: (usize, usize),
    pub marginals: Marginals,
    /// Probability that hardship follows the household's vulnerability
    /// (low income, non-white, low education) instead of its marginal.
    pub hardship_link: f64,
    /// Probability that tolerance falls with vulnerability instead of
    /// following its marginal.
    pub tolerance_link: f64,
}

impl GeneratorConfig {
    pub fn new(seed: u64, n_areas: usize, users_per_area: (usize, usize), marginals: Marginals) -> Self {
        GeneratorConfig {
            seed,
            n_areas,
            users_per_area,
            marginals,
            hardship_link: 0.0,
            tolerance_link: 0.0,
        }
    }
}

/// Vulnerability in [0, 1] from the three sociodemographic codes.
fn vulnerability(income: u8, race: u8, education: u8) -> f64 {
    (f64::from(income - 1) / 4.0 + f64::from(race - 1) / 2.0 + f64::from(education - 1) / 6.0) / 3.0
}

pub fn generate_scenario(config: &GeneratorConfig, params: Params) -> Result<Scenario> {
    params.validate()?;
    if config.n_areas < 1 {
        return Err(Error::Validation("n_areas must be >= 1".into()));
    }
    let (lo, hi) = config.users_per_area;
    if lo < 1 || lo > hi {
        return Err(Error::Validation(format!(
            "users_per_area must satisfy 1 <= min <= max, got ({lo}, {hi})"
        )));
    }
    for (name, link) in [("hardship_link", config.hardship_link), ("tolerance_link", config.tolerance_link)] {
        if !(0.0..=1.0).contains(&link) {
            return Err(Error::Validation(format!("{name} must lie in [0, 1]")));
        }
    }
    config.marginals.validate(params.horizon)?;

    let m = &config.marginals;
    let tmax = tolerance_cap(params.horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut households = Vec::new();
    for area in 1..=config.n_areas {
        let count = rng.gen_range(lo..=hi);
        for _ in 0..count {
            let income = m.income.sample(rng.gen());
            let race = m.race.sample(rng.gen());
            let education = m.education.sample(rng.gen());
            let demand = m.demand.sample(rng.gen());
            let mut tolerance = m.tolerance.sample(rng.gen());
            let mut hardship = m.hardship.sample(rng.gen());
            let perception = m.perception.sample(rng.gen());
            let (u_hard, u_tol): (f64, f64) = (rng.gen(), rng.gen());
            let v = vulnerability(income, race, education);
            if u_hard < config.hardship_link {
                hardship = 1 + (v * 3.0).round() as u8;
            }
            if u_tol < config.tolerance_link {
                tolerance = 1 + ((1.0 - v) * f64::from(tmax - 1)).round() as u32;
            }
            households.push(HouseholdProfile {
                id: format!("h{:05}", households.len() + 1),
                area_id: area as u32,
                income_code: income,
                race_code: race,
                education_code: education,
                demand_mbps: demand,
                tolerance_days: tolerance,
                hardship_code: hardship,
                perception_code: perception,
            });
        }
    }
    Scenario::new(households, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,area_id,income_code,race_code,education_code,demand_mbps,tolerance_days,hardship_code,perception_code\n";

    fn params() -> Params {
        Params::default()
    }

    #[test]
    fn income_label_maps_to_code_five() {
        let csv = format!("{HEADER}a,1,\"Less than $49,999\",1,1,1,3,1,1\n");
        let mut p = params();
        p.tau_source = TauSource::Income;
        let s = Scenario::read_csv(csv.as_bytes(), p).unwrap();
        assert_eq!(s.households[0].income_code, 5);
        assert_eq!(s.tau(0), 5.0);
    }

    #[test]
    fn demand_label_and_multichoice() {
        let csv = format!(
            "{HEADER}a,1,1,1,1,Communicate with family,3,1,1\nb,1,1,1,1,\"Use social media;Streaming entertainment\",3,1,1\nc,2,1,1,1,1;10,3,1,1\n"
        );
        let s = Scenario::read_csv(csv.as_bytes(), params()).unwrap();
        assert_eq!(s.households[0].demand_mbps, 1.0);
        assert_eq!(s.households[1].demand_mbps, 1000.0);
        assert_eq!(s.households[2].demand_mbps, 10.0);
    }

    #[test]
    fn empty_file_is_rejected() {
        let err = Scenario::read_csv("".as_bytes(), params()).unwrap_err();
        assert!(err.to_string().contains("no households"), "{err}");
        let err = Scenario::read_csv(HEADER.as_bytes(), params()).unwrap_err();
        assert!(err.to_string().contains("no households"), "{err}");
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let csv = format!("{HEADER}a,1,1,1,1,1,3,1,1\nb,1,1,1,1,1,3\n");
        match Scenario::read_csv(csv.as_bytes(), params()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let csv = format!("{HEADER}a,1,x,1,1,1,3,1,1\n");
        match Scenario::read_csv(csv.as_bytes(), params()).unwrap_err() {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("income_code"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn locale_separators_rejected() {
        let csv = format!("{HEADER}a,1,1,1,1,\"1,5\",3,1,1\n");
        assert!(matches!(
            Scenario::read_csv(csv.as_bytes(), params()),
            Err(Error::Parse { .. })
        ));
        assert!(parse_decimal("1 000", 1, "x").is_err());
        assert!(parse_decimal("NaN", 1, "x").is_err());
        assert!(parse_decimal("inf", 1, "x").is_err());
        assert_eq!(parse_decimal("2.5e2", 1, "x").unwrap(), 250.0);
    }

    #[test]
    fn codes_outside_sets_fail_validation() {
        let csv = format!("{HEADER}a,1,2,1,1,1,3,1,1\n");
        assert!(matches!(
            Scenario::read_csv(csv.as_bytes(), params()),
            Err(Error::Validation(_))
        ));
        let csv = format!("{HEADER}a,1,1,1,1,1,16,1,1\n");
        let err = Scenario::read_csv(csv.as_bytes(), params()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("exceeds T"));
    }

    #[test]
    fn tau_of_reads_selected_code() {
        let h = HouseholdProfile {
            id: "x".into(),
            area_id: 1,
            income_code: 1,
            race_code: 3,
            education_code: 7,
            demand_mbps: 1.0,
            tolerance_days: 1,
            hardship_code: 1,
            perception_code: 1,
        };
        assert_eq!(tau_of(&h, TauSource::Race), 3.0);
        assert_eq!(tau_of(&h, TauSource::Education), 7.0);
        assert_eq!(tau_of(&h, TauSource::Income), 1.0);
    }

    #[test]
    fn grouping_sorts_areas_and_keeps_row_order() {
        let csv = format!(
            "{HEADER}a,7,1,1,1,1,3,1,1\nb,2,1,1,1,1,3,1,1\nc,7,1,1,1,1,3,1,1\n"
        );
        let s = Scenario::read_csv(csv.as_bytes(), params()).unwrap();
        assert_eq!(s.areas.len(), 2);
        assert_eq!(s.areas[0].area_id, 2);
        assert_eq!(s.areas[1].household_ids, vec![0, 2]);
        assert_eq!(s.area_of(2), 1);
    }

    #[test]
    fn params_file_parses_and_converts_gbps() {
        let p = Params::parse("# headline\nT = 15\nsmax_gbps = 10\ndelta=1\ntheta = 10\ntau_source = race\n").unwrap();
        assert_eq!(p.smax_mbps, 10_000.0);
        assert_eq!(p.tau_source, TauSource::Race);
        assert!(Params::parse("smax_gbps = 1,5\n").is_err());
        assert!(Params::parse("bogus = 1\n").is_err());
        assert_eq!(Params::parse(&p.to_file_string()).unwrap(), p);
    }

    #[test]
    fn generator_is_deterministic_and_honors_point_mass() {
        let mut m = Marginals::uniform(15);
        m.education = Categorical::point(7);
        let cfg = GeneratorConfig::new(9, 4, (2, 5), m);
        let a = generate_scenario(&cfg, params()).unwrap();
        let b = generate_scenario(&cfg, params()).unwrap();
        assert_eq!(a, b);
        assert!(a.households.iter().all(|h| h.education_code == 7));
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.write_csv(&mut buf_a).unwrap();
        b.write_csv(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn generator_rejects_bad_distribution() {
        let mut m = Marginals::uniform(15);
        m.race = Categorical::new(vec![1, 3], vec![0.5, 0.6]);
        let cfg = GeneratorConfig::new(1, 2, (1, 2), m);
        assert!(matches!(generate_scenario(&cfg, params()), Err(Error::Validation(_))));

        let mut m = Marginals::uniform(15);
        m.tolerance = Categorical::point(15);
        let cfg = GeneratorConfig::new(1, 2, (1, 2), m);
        assert!(generate_scenario(&cfg, params()).is_err());
    }

    #[test]
    fn generated_tolerance_respects_short_horizon() {
        let mut p = params();
        p.horizon = 4;
        let cfg = GeneratorConfig::new(3, 5, (3, 3), Marginals::uniform(4));
        let s = generate_scenario(&cfg, p).unwrap();
        assert!(s.households.iter().all(|h| (1..=4).contains(&h.tolerance_days)));
    }
}
