//! Closed-form empirical risk functional of a spline quantile model and its
//! gradients.
//!
//! For a return `y` and clamped level `a = g^{-1}(y)` in `[eta, 1]`, one sample
//! contributes
//!
//! ```text
//! S(y) = (1 - eta + ln a) (y - gamma)
//!      + sum_m b_m (1 - (1 - d_m)^2 / 2 - max(a, d_m) + d_m max(ln a, ln d_m))
//! ```
//!
//! plus `sum_{d_m < eta} b_m (eta - d_m)^2 / 2`, which starts the hinge integrals
//! at `eta` rather than at their knots. The total equals
//! `int_eta^1 alpha^{-1} l_alpha(y - g(alpha)) d alpha`. The dependence of `a` on
//! the parameters drops out of the gradient because `dS/da = 0` at `g(a) = y`.

use serde::{Deserialize, Serialize};

use super::spline::{PreparedSpline, SplineQuantile, TruncationEta};
use crate::error::{invalid, Result};
use crate::ingest::ReturnPanel;

/// Gradient of the empirical objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UprGradients {
    pub beta: Vec<f64>,
    pub gamma: f64,
    /// With respect to the hinge slopes `b_m`.
    pub slopes: Vec<f64>,
}

impl UprGradients {
    /// Chain rule to the cumulative slopes `delta_m`.
    pub fn deltas(&self) -> Vec<f64> {
        slope_grad_to_delta_grad(&self.slopes)
    }
}

pub(crate) fn slope_grad_to_delta_grad(g_b: &[f64]) -> Vec<f64> {
    let m = g_b.len();
    (0..m)
        .map(|j| {
            if j + 1 < m {
                g_b[j] - g_b[j + 1]
            } else {
                g_b[j]
            }
        })
        .collect()
}

/// Knot-only constants of the closed form.
#[derive(Debug, Clone)]
pub(crate) struct KnotTerms {
    knots: Vec<f64>,
    /// `1 - (1 - d)^2 / 2`
    head: Vec<f64>,
    /// Per-knot coefficient when `d_m > a`: `head - d + d ln d`.
    above: Vec<f64>,
}

impl KnotTerms {
    pub fn new(knots: &[f64]) -> Self {
        let head: Vec<f64> = knots
            .iter()
            .map(|d| 1.0 - (1.0 - d) * (1.0 - d) / 2.0)
            .collect();
        let above = knots
            .iter()
            .zip(&head)
            .map(|(&d, &h)| h - d + xlogx(d))
            .collect();
        KnotTerms {
            knots: knots.to_vec(),
            head,
            above,
        }
    }

    /// Coefficient of `b_m` in the closed form at level `a`.
    #[cfg(test)]
    pub fn coefficient(&self, m: usize, a: f64) -> f64 {
        let d = self.knots[m];
        if d <= a {
            self.head[m] - a + if d > 0.0 { d * a.ln() } else { 0.0 }
        } else {
            self.above[m]
        }
    }
}

fn low_terms(knots: &[f64], eta: f64) -> Vec<f64> {
    knots
        .iter()
        .map(|&d| {
            if d < eta {
                (eta - d) * (eta - d) / 2.0
            } else {
                0.0
            }
        })
        .collect()
}

// d ln d, taken as 0 at d = 0
fn xlogx(d: f64) -> f64 {
    if d > 0.0 {
        d * d.ln()
    } else {
        0.0
    }
}

/// Value and gradient of the mean closed form over a batch of portfolio returns.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub value: f64,
    /// `dS/dy_i`, not divided by n.
    pub dy: Vec<f64>,
    pub gamma: f64,
    pub slopes: Vec<f64>,
}

/// Evaluates the objective for fixed knots. Reusable across optimizer steps.
#[derive(Debug, Clone)]
pub(crate) struct ObjectiveEvaluator {
    terms: KnotTerms,
    eta: f64,
    /// `(eta - d)^2 / 2` for knots below `eta`, else 0.
    low: Vec<f64>,
    // scratch per segment
    count: Vec<f64>,
    sum_level: Vec<f64>,
    sum_log: Vec<f64>,
}

impl ObjectiveEvaluator {
    pub fn new(knots: &[f64], eta: TruncationEta) -> Self {
        let k = knots.len();
        ObjectiveEvaluator {
            terms: KnotTerms::new(knots),
            eta: eta.value(),
            low: low_terms(knots, eta.value()),
            count: vec![0.0; k],
            sum_level: vec![0.0; k],
            sum_log: vec![0.0; k],
        }
    }

    /// Mean closed-form value only.
    pub fn value(&self, spline: &PreparedSpline, ys: &[f64]) -> f64 {
        let slopes = super::spline::deltas_to_slopes(&spline.deltas);
        let prefix = Prefix::new(&self.terms, &slopes);
        let total: f64 = ys
            .iter()
            .map(|&y| {
                let inv = spline.invert(y, self.eta);
                prefix.sample_value(
                    spline.gamma,
                    y,
                    inv.level,
                    inv.level.ln(),
                    inv.segment,
                    self.eta,
                )
            })
            .sum();
        total / ys.len() as f64 + self.low_value(&slopes)
    }

    fn low_value(&self, slopes: &[f64]) -> f64 {
        slopes.iter().zip(&self.low).map(|(b, l)| b * l).sum()
    }

    /// Mean value and gradients in one pass plus an O(M) sweep.
    pub fn evaluate(&mut self, spline: &PreparedSpline, ys: &[f64]) -> Evaluation {
        let k = self.terms.knots.len();
        let slopes = super::spline::deltas_to_slopes(&spline.deltas);
        let prefix = Prefix::new(&self.terms, &slopes);
        self.count.iter_mut().for_each(|c| *c = 0.0);
        self.sum_level.iter_mut().for_each(|c| *c = 0.0);
        self.sum_log.iter_mut().for_each(|c| *c = 0.0);

        let mut total = 0.0;
        let mut sum_dy = 0.0;
        let mut dy = Vec::with_capacity(ys.len());
        for &y in ys {
            let inv = spline.invert(y, self.eta);
            let ln_a = inv.level.ln();
            total += prefix.sample_value(spline.gamma, y, inv.level, ln_a, inv.segment, self.eta);
            let g = 1.0 - self.eta + ln_a;
            dy.push(g);
            sum_dy += g;
            self.count[inv.segment] += 1.0;
            self.sum_level[inv.segment] += inv.level;
            self.sum_log[inv.segment] += ln_a;
        }
        let n = ys.len() as f64;

        // Samples in segments >= m see knot m at or below their level.
        let mut grad_b = vec![0.0; k];
        let (mut c, mut sa, mut sl) = (0.0, 0.0, 0.0);
        for m in (0..k).rev() {
            c += self.count[m];
            sa += self.sum_level[m];
            sl += self.sum_log[m];
            let d = self.terms.knots[m];
            let below = c * self.terms.head[m] - sa + if d > 0.0 { d * sl } else { 0.0 };
            grad_b[m] = (below + (n - c) * self.terms.above[m]) / n + self.low[m];
        }

        Evaluation {
            value: total / n + self.low_value(&slopes),
            dy,
            gamma: -sum_dy / n,
            slopes: grad_b,
        }
    }
}

/// Prefix sums over knots for O(1) per-sample evaluation of the hinge part.
struct Prefix {
    /// `sum_{j<=m} b_j head_j`
    head: Vec<f64>,
    /// `sum_{j<=m} b_j`
    slope: Vec<f64>,
    /// `sum_{j<=m} b_j d_j`
    knot_moment: Vec<f64>,
    /// `sum_{j>m} b_j above_j`
    tail: Vec<f64>,
}

impl Prefix {
    fn new(terms: &KnotTerms, slopes: &[f64]) -> Self {
        let k = slopes.len();
        let mut head = Vec::with_capacity(k);
        let mut slope = Vec::with_capacity(k);
        let mut knot_moment = Vec::with_capacity(k);
        let (mut h, mut s, mut km) = (0.0, 0.0, 0.0);
        for (m, &b) in slopes.iter().enumerate() {
            h += b * terms.head[m];
            s += b;
            km += b * terms.knots[m];
            head.push(h);
            slope.push(s);
            knot_moment.push(km);
        }
        let mut tail = vec![0.0; k];
        let mut t = 0.0;
        for m in (0..k).rev() {
            tail[m] = t;
            t += slopes[m] * terms.above[m];
        }
        Prefix {
            head,
            slope,
            knot_moment,
            tail,
        }
    }

    #[inline]
    fn sample_value(&self, gamma: f64, y: f64, a: f64, ln_a: f64, seg: usize, eta: f64) -> f64 {
        (1.0 - eta + ln_a) * (y - gamma) + self.head[seg] - a * self.slope[seg]
            + ln_a * self.knot_moment[seg]
            + self.tail[seg]
    }
}

fn check_inputs(panel: &ReturnPanel, beta: &[f64]) -> Result<()> {
    if beta.len() != panel.n_assets() {
        return Err(invalid(format!(
            "{} weights for {} assets",
            beta.len(),
            panel.n_assets()
        )));
    }
    Ok(())
}

/// Mean closed-form risk functional of `model` over a series of returns.
pub fn upr_objective(returns: &[f64], model: &SplineQuantile, eta: TruncationEta) -> Result<f64> {
    if returns.is_empty() {
        return Err(invalid("empty return series"));
    }
    let ev = ObjectiveEvaluator::new(model.knots(), eta);
    Ok(ev.value(&model.prepared(), returns))
}

/// Closed-form objective of portfolio `beta` on the panel rows.
pub fn empirical_upr_objective(
    panel: &ReturnPanel,
    beta: &[f64],
    model: &SplineQuantile,
    eta: TruncationEta,
) -> Result<f64> {
    check_inputs(panel, beta)?;
    upr_objective(&panel.portfolio_returns(beta), model, eta)
}

/// Gradients of [`empirical_upr_objective`] in `beta`, `gamma` and the slopes `b`.
pub fn analytic_gradients(
    panel: &ReturnPanel,
    beta: &[f64],
    model: &SplineQuantile,
    eta: TruncationEta,
) -> Result<UprGradients> {
    check_inputs(panel, beta)?;
    let ys = panel.portfolio_returns(beta);
    let mut ev = ObjectiveEvaluator::new(model.knots(), eta);
    let e = ev.evaluate(&model.prepared(), &ys);
    Ok(UprGradients {
        beta: beta_gradient(panel, &e.dy),
        gamma: e.gamma,
        slopes: e.slopes,
    })
}

/// `(1/n) sum_i dy_i x_i`.
pub(crate) fn beta_gradient(panel: &ReturnPanel, dy: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; panel.n_assets()];
    for (row, &w) in panel.rows().zip(dy) {
        for (gj, x) in g.iter_mut().zip(row) {
            *gj += w * x;
        }
    }
    let n = panel.n_rows() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::spline::uniform_knots;

    /// Direct O(M) evaluation of one sample's closed form.
    fn direct(y: f64, model: &SplineQuantile, eta: f64) -> f64 {
        let a = model.invert(y, TruncationEta::new(eta).unwrap());
        let terms = KnotTerms::new(model.knots());
        let hinge: f64 = model
            .slopes()
            .iter()
            .enumerate()
            .map(|(m, b)| b * terms.coefficient(m, a))
            .sum();
        let low: f64 = model
            .slopes()
            .iter()
            .zip(low_terms(model.knots(), eta))
            .map(|(b, l)| b * l)
            .sum();
        (1.0 - eta + a.ln()) * (y - model.gamma()) + hinge + low
    }

    #[test]
    fn identity_spline_single_sample() {
        let eta = TruncationEta::default();
        let v = upr_objective(&[0.5], &SplineQuantile::identity(), eta).unwrap();
        let expected = 0.5 * (1.0 - 1e-5 + 0.5f64.ln()) + 1e-10 / 2.0;
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.15342).abs() < 1e-5);
    }

    #[test]
    fn prefix_form_matches_direct_sum() {
        let model = SplineQuantile::from_deltas(
            -0.3,
            uniform_knots(5).unwrap(),
            &[0.2, 1.5, 0.0, 0.7, 2.0, 0.4],
        )
        .unwrap();
        let eta = 1e-3;
        for y in [-1.0, -0.3, -0.29, 0.0, 0.1, 0.5, 0.9, 5.0] {
            let fast = upr_objective(&[y], &model, TruncationEta::new(eta).unwrap()).unwrap();
            assert!((fast - direct(y, &model, eta)).abs() < 1e-13, "y = {y}");
        }
    }

    #[test]
    fn delta_chain_rule() {
        let g = slope_grad_to_delta_grad(&[3.0, 1.0, 0.5]);
        assert_eq!(g, vec![2.0, 0.5, 0.5]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let panel = ReturnPanel::from_rows(&[vec![0.1, 0.2]]).unwrap();
        let model = SplineQuantile::identity();
        assert!(empirical_upr_objective(&panel, &[1.0], &model, TruncationEta::default()).is_err());
        assert!(upr_objective(&[], &model, TruncationEta::default()).is_err());
    }
}
