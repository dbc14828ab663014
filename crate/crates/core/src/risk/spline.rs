//! Linear isotonic regression spline (LIRS) quantile model
//!
//! `g(alpha) = gamma + sum_m b_m (alpha - d_m)_+` on fixed knots
//! `0 = d_0 < d_1 < ... < d_M = 1`. The cumulative slopes
//! `delta_m = b_0 + ... + b_m` are the slope of `g` on `[d_m, d_{m+1})`, and
//! monotonicity is the constraint `delta_m >= 0`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Truncation level of the risk functional; levels below it are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TruncationEta(f64);

impl TruncationEta {
    pub const DEFAULT: TruncationEta = TruncationEta(1e-5);

    pub fn new(eta: f64) -> Result<Self> {
        if eta > 0.0 && eta < 1.0 {
            Ok(TruncationEta(eta))
        } else {
            Err(invalid(format!(
                "truncation eta = {eta} must lie in (0, 1)"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for TruncationEta {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<f64> for TruncationEta {
    type Error = crate::error::UprError;
    fn try_from(v: f64) -> Result<Self> {
        TruncationEta::new(v)
    }
}

impl From<TruncationEta> for f64 {
    fn from(e: TruncationEta) -> f64 {
        e.0
    }
}

/// Uniform knots `d_m = m / M`, `m = 0..=M`.
pub fn uniform_knots(m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(invalid("knot count M must be at least 1"));
    }
    Ok((0..=m).map(|i| i as f64 / m as f64).collect())
}

// Relative slack allowed on cumulative slopes that come out of floating-point
// sums of slopes a hair below zero.
const DELTA_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineDoc", into = "SplineDoc")]
pub struct SplineQuantile {
    gamma: f64,
    knots: Vec<f64>,
    slopes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SplineDoc {
    gamma: f64,
    knots: Vec<f64>,
    slopes: Vec<f64>,
}

impl TryFrom<SplineDoc> for SplineQuantile {
    type Error = crate::error::UprError;
    fn try_from(d: SplineDoc) -> Result<Self> {
        SplineQuantile::new(d.gamma, d.knots, d.slopes)
    }
}

impl From<SplineQuantile> for SplineDoc {
    fn from(s: SplineQuantile) -> Self {
        SplineDoc {
            gamma: s.gamma,
            knots: s.knots,
            slopes: s.slopes,
        }
    }
}

fn validate_knots(knots: &[f64]) -> Result<()> {
    if knots.len() < 2 {
        return Err(invalid("spline needs at least two knots"));
    }
    if knots[0] != 0.0 || knots[knots.len() - 1] != 1.0 {
        return Err(invalid("knots must start at 0 and end at 1"));
    }
    if knots.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("knots must be strictly increasing"));
    }
    Ok(())
}

impl SplineQuantile {
    /// Build from intercept, knots and hinge slopes `b`.
    pub fn new(gamma: f64, knots: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        validate_knots(&knots)?;
        if slopes.len() != knots.len() {
            return Err(invalid(format!(
                "{} slopes for {} knots",
                slopes.len(),
                knots.len()
            )));
        }
        if !gamma.is_finite() || slopes.iter().any(|b| !b.is_finite()) {
            return Err(invalid("spline parameters must be finite"));
        }
        let spline = SplineQuantile {
            gamma,
            knots,
            slopes,
        };
        let deltas = spline.deltas();
        let scale = deltas.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        if deltas.iter().any(|&d| d < -DELTA_SLACK * scale.max(1.0)) {
            return Err(invalid(
                "cumulative slopes must be nonnegative (monotone spline)",
            ));
        }
        Ok(spline)
    }

    /// Build from intercept, knots and cumulative slopes `delta`.
    pub fn from_deltas(gamma: f64, knots: Vec<f64>, deltas: &[f64]) -> Result<Self> {
        if deltas.iter().any(|&d| d < 0.0) {
            return Err(invalid("cumulative slopes must be nonnegative"));
        }
        let slopes = deltas_to_slopes(deltas);
        SplineQuantile::new(gamma, knots, slopes)
    }

    /// `g(alpha) = alpha` on `[0, 1]`, knots (0, 1).
    pub fn identity() -> Self {
        SplineQuantile {
            gamma: 0.0,
            knots: vec![0.0, 1.0],
            slopes: vec![1.0, 0.0],
        }
    }

    /// Flat curve at `c`.
    pub fn constant(c: f64, knots: Vec<f64>) -> Result<Self> {
        let n = knots.len();
        SplineQuantile::new(c, knots, vec![0.0; n])
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Number of interior segments `M`.
    pub fn segments(&self) -> usize {
        self.knots.len() - 1
    }

    /// Cumulative slopes, clipped at zero where rounding left them slightly negative.
    pub fn deltas(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.slopes
            .iter()
            .map(|b| {
                acc += b;
                acc
            })
            .collect()
    }

    pub fn eval(&self, alpha: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid(format!("level {alpha} outside [0, 1]")));
        }
        Ok(self.prepared().eval(alpha))
    }

    /// Level at which the curve reaches `y`, clamped to `[eta, 1]`.
    pub fn invert(&self, y: f64, eta: TruncationEta) -> f64 {
        self.prepared().invert(y, eta.value()).level
    }

    pub(crate) fn prepared(&self) -> PreparedSpline {
        let deltas: Vec<f64> = self.deltas().into_iter().map(|d| d.max(0.0)).collect();
        PreparedSpline::new(self.gamma, &self.knots, deltas)
    }

    /// Two-column `alpha,value` CSV on the given level grid.
    pub fn write_curve_csv<W: Write>(&self, out: W, levels: &[f64]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["alpha", "value"])?;
        let p = self.prepared();
        for &a in levels {
            if !(0.0..=1.0).contains(&a) {
                return Err(invalid(format!("level {a} outside [0, 1]")));
            }
            w.write_record([a.to_string(), p.eval(a).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn deltas_to_slopes(deltas: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    deltas
        .iter()
        .map(|&d| {
            let b = d - prev;
            prev = d;
            b
        })
        .collect()
}

/// Result of inverting the spline at a return value.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Inversion {
    /// Clamped level in `[eta, 1]`.
    pub level: f64,
    /// Largest knot index `m` with `d_m <= level`.
    pub segment: usize,
}

/// Spline in evaluation form: cumulative slopes and knot values precomputed.
#[derive(Debug, Clone)]
pub(crate) struct PreparedSpline {
    pub gamma: f64,
    pub knots: Vec<f64>,
    pub deltas: Vec<f64>,
    /// `g(d_m)` for every knot.
    pub knot_values: Vec<f64>,
}

impl PreparedSpline {
    pub fn new(gamma: f64, knots: &[f64], deltas: Vec<f64>) -> Self {
        let mut knot_values = Vec::with_capacity(knots.len());
        let mut v = gamma;
        knot_values.push(v);
        for m in 0..knots.len() - 1 {
            v += deltas[m] * (knots[m + 1] - knots[m]);
            knot_values.push(v);
        }
        PreparedSpline {
            gamma,
            knots: knots.to_vec(),
            deltas,
            knot_values,
        }
    }

    pub fn eval(&self, alpha: f64) -> f64 {
        let m = segment_of(&self.knots, alpha);
        self.knot_values[m] + self.deltas[m] * (alpha - self.knots[m])
    }

    pub fn invert(&self, y: f64, eta: f64) -> Inversion {
        let last = self.knots.len() - 1;
        if y >= self.knot_values[last] {
            return Inversion {
                level: 1.0,
                segment: last,
            };
        }
        if y < self.knot_values[0] {
            return self.floor(eta);
        }
        // largest m with g(d_m) <= y; y < g(1) guarantees m < last and delta_m > 0
        let m = self.knot_values.partition_point(|&v| v <= y) - 1;
        let level = self.knots[m] + (y - self.knot_values[m]) / self.deltas[m];
        if level < eta {
            return self.floor(eta);
        }
        let level = level.min(1.0);
        let segment = if level < self.knots[m + 1] {
            m
        } else {
            segment_of(&self.knots, level)
        };
        Inversion { level, segment }
    }

    fn floor(&self, eta: f64) -> Inversion {
        Inversion {
            level: eta,
            segment: segment_of(&self.knots, eta),
        }
    }
}

/// Largest `m` with `knots[m] <= alpha` (alpha clamped into `[0, 1]`).
pub(crate) fn segment_of(knots: &[f64], alpha: f64) -> usize {
    knots
        .partition_point(|&d| d <= alpha)
        .saturating_sub(1)
        .min(knots.len() - 1)
}
