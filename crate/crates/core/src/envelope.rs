//! Concave over-estimators of the weighted sigmoid `tau * sigma(theta (x - r_hat))`.
//!
//! The main form is `min(a x + b, tau)`: a line anchored at the sigmoid's
//! value at zero and tangent to its concave branch, capped at `tau`. Branch
//! and bound additionally needs over-estimators on sub-intervals, built by
//! [`build_box_envelope`].

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::utility::{sigmoid_rate_slope, weighted_sigmoid};

/// Absolute tolerance on the tangency abscissa.
pub const TANGENT_TOL: f64 = 1e-9;
pub const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopePiece {
    pub a: f64,
    pub b: f64,
    pub cap: f64,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub tau: f64,
    pub theta: f64,
    pub r_hat: f64,
    /// `false` when no tangent point exists inside `[0, S_max]` and the line
    /// is the secant to `(S_max, f(S_max))`.
    pub tangent: bool,
}

impl EnvelopePiece {
    pub fn value(&self, x: f64) -> f64 {
        envelope_value(self, x)
    }

    /// Allocation beyond which the cap binds.
    pub fn saturation(&self) -> f64 {
        (self.cap - self.b) / self.a
    }

    pub fn sigmoid(&self, x: f64) -> f64 {
        weighted_sigmoid(self.tau, self.r_hat, self.theta, x)
    }
}

pub fn envelope_value(piece: &EnvelopePiece, x: f64) -> f64 {
    (piece.a * x + piece.b).min(piece.cap)
}

/// Bisects `g` on `[lo, hi]` where `g(lo) > 0 >= g(hi)`; returns the final
/// bracket.
fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= TANGENT_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

pub fn build_envelope(tau: f64, r_hat: f64, theta: f64, s_max: f64) -> Result<EnvelopePiece> {
    for (name, v) in [("tau", tau), ("r_hat", r_hat), ("theta", theta), ("s_max", s_max)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Argument(format!("{name} must be positive, got {v}")));
        }
    }
    let f = |x: f64| weighted_sigmoid(tau, r_hat, theta, x);
    let df = |x: f64| tau * sigmoid_rate_slope(x, r_hat, theta);
    let y0 = f(0.0);
    // g > 0 left of the tangency point, < 0 right of it (within the concave branch)
    let g = |x: f64| df(x) * x - (f(x) - y0);

    if s_max > r_hat && g(s_max) <= 0.0 {
        let (lo, _) = bisect(g, r_hat, s_max);
        // slope taken at the left end of the bracket, never below the exact tangent slope
        let a = df(lo);
        Ok(EnvelopePiece {
            a,
            b: y0,
            cap: tau,
            x0: 0.0,
            y0,
            x1: lo,
            y1: f(lo),
            tau,
            theta,
            r_hat,
            tangent: true,
        })
    } else {
        let y1 = f(s_max);
        let a = ((y1 - y0) / s_max).max(f64::MIN_POSITIVE);
        Ok(EnvelopePiece {
            a,
            b: y0,
            cap: tau,
            x0: 0.0,
            y0,
            x1: s_max,
            y1,
            tau,
            theta,
            r_hat,
            tangent: false,
        })
    }
}

/// One envelope per household (coefficients depend only on `tau` and
/// `r_hat`, so they are shared across slots). Identical `(tau, r_hat)`
/// pairs reuse one bisection.
pub fn build_envelopes(scenario: &Scenario) -> Result<Vec<EnvelopePiece>> {
    let theta = scenario.params.theta;
    let domain = scenario.params.smax_mbps.max(1e-9);
    let mut cache: HashMap<(u64, u64), EnvelopePiece> = HashMap::new();
    scenario
        .households
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let tau = scenario.tau(k);
            let key = (tau.to_bits(), h.demand_mbps.to_bits());
            if let Some(p) = cache.get(&key) {
                return Ok(*p);
            }
            let p = build_envelope(tau, h.demand_mbps, theta, domain)?;
            cache.insert(key, p);
            Ok(p)
        })
        .collect()
}

/// Over-estimator of the weighted sigmoid restricted to `[lo, hi]`, as the
/// minimum of a few affine functions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxEnvelope {
    pub lo: f64,
    pub hi: f64,
    /// `(slope, intercept)` pairs.
    pub pieces: Vec<(f64, f64)>,
}

impl BoxEnvelope {
    pub fn value(&self, x: f64) -> f64 {
        self.pieces
            .iter()
            .map(|(a, b)| a * x + b)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn build_box_envelope(tau: f64, r_hat: f64, theta: f64, lo: f64, hi: f64) -> BoxEnvelope {
    let f = |x: f64| weighted_sigmoid(tau, r_hat, theta, x);
    let df = |x: f64| tau * sigmoid_rate_slope(x, r_hat, theta);
    let tangent = |x: f64| (df(x), f(x) - df(x) * x);
    let flat = (0.0, f(hi));
    let secant = |l: f64, h: f64| {
        let a = (f(h) - f(l)) / (h - l);
        (a, f(l) - a * l)
    };

    let mut pieces = vec![flat];
    if hi - lo <= 1e-12 {
        return BoxEnvelope { lo, hi, pieces };
    }
    if hi <= r_hat {
        pieces.push(secant(lo, hi));
    } else if lo >= r_hat {
        let mid = 0.5 * (lo + hi);
        pieces.extend([tangent(lo), tangent(mid), tangent(hi)]);
    } else {
        let y_lo = f(lo);
        let g = |x: f64| df(x) * (x - lo) - (f(x) - y_lo);
        if g(hi) > 0.0 {
            pieces.push(secant(lo, hi));
        } else {
            let (x1, _) = bisect(g, r_hat, hi);
            let a = df(x1);
            pieces.push((a, y_lo - a * lo));
            pieces.push(tangent(0.5 * (x1 + hi)));
            pieces.push(tangent(hi));
        }
    }
    BoxEnvelope { lo, hi, pieces }
}
