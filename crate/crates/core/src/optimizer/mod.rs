//! Alternating projected gradient descent for the UPR portfolio.
//!
//! Each step moves the weights `beta`, the intercept `gamma` and the
//! cumulative slopes `delta` along the gradient of the closed-form objective,
//! projects `beta` back onto the equality constraints and clips `delta` at
//! zero.

mod projection;

use std::borrow::Cow;

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use projection::{project_deltas, project_weights, Constraints};

use crate::error::{invalid, Result, UprError};
use crate::ingest::ReturnPanel;
use crate::portfolios::PortfolioWeights;
use crate::risk::objective::{beta_gradient, slope_grad_to_delta_grad, ObjectiveEvaluator};
use crate::risk::spline::{uniform_knots, PreparedSpline, SplineQuantile, TruncationEta};
use crate::risk::SortedSample;
use crate::rng::{stream, Stream};

/// How the target return `mu0` is chosen for a fit window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetReturn {
    /// Expected return of the equal-weight portfolio, `mean(mu_hat)`.
    EqualWeight,
    Fixed(f64),
}

impl TargetReturn {
    pub fn resolve(&self, mu_hat: &[f64]) -> f64 {
        match *self {
            TargetReturn::EqualWeight => mu_hat.iter().sum::<f64>() / mu_hat.len() as f64,
            TargetReturn::Fixed(v) => v,
        }
    }
}

/// Starting intercept of the spline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma0 {
    /// Empirical 1% quantile of the starting portfolio's returns.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRateDecay {
    Constant,
    /// `lr / sqrt(t + 1)`
    InvSqrt,
}

/// Update direction applied before each projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Plain gradient step `theta - lr * grad`.
    Gradient,
    /// Per-coordinate Adam moments on the same gradients.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub eta: TruncationEta,
    /// Number of knot intervals `M`; knots are `m / M`.
    pub knots: usize,
    pub mu0: TargetReturn,
    pub learning_rate: f64,
    pub decay: LearningRateDecay,
    pub step_rule: StepRule,
    pub max_iters: usize,
    /// Stop once the relative objective change stays below this for
    /// [`FitConfig::patience`] consecutive steps.
    pub rel_tol: f64,
    pub patience: usize,
    pub seed: u64,
    pub gamma0: Gamma0,
    /// Check feasibility after every step (always on in debug builds).
    pub check_feasibility: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            eta: TruncationEta::DEFAULT,
            knots: 19,
            mu0: TargetReturn::EqualWeight,
            learning_rate: 0.01,
            decay: LearningRateDecay::Constant,
            step_rule: StepRule::Adam,
            max_iters: 10_000,
            rel_tol: 1e-8,
            patience: 5,
            seed: 0,
            gamma0: Gamma0::Auto,
            check_feasibility: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid("learning rate must be positive"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be at least 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(invalid("rel_tol must be positive"));
        }
        if self.knots == 0 {
            return Err(invalid("knot count must be at least 1"));
        }
        if let TargetReturn::Fixed(v) = self.mu0 {
            if !v.is_finite() {
                return Err(invalid("target return must be finite"));
            }
        }
        if let Gamma0::Value(v) = self.gamma0 {
            if !v.is_finite() {
                return Err(invalid("gamma0 must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub weights: PortfolioWeights,
    pub model: SplineQuantile,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-12;

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Turn a gradient into an Adam direction in place.
    fn direction(&mut self, g: &mut [f64]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_B1.powi(self.t);
        let c2 = 1.0 - ADAM_B2.powi(self.t);
        for ((gi, m), v) in g.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            *m = ADAM_B1 * *m + (1.0 - ADAM_B1) * *gi;
            *v = ADAM_B2 * *v + (1.0 - ADAM_B2) * *gi * *gi;
            *gi = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

enum Data<'a> {
    Panel {
        panel: &'a ReturnPanel,
        constraints: &'a Constraints,
    },
    Series(&'a [f64]),
}

impl Data<'_> {
    fn returns<'b>(&'b self, beta: &[f64]) -> Cow<'b, [f64]> {
        match self {
            Data::Panel { panel, .. } => Cow::Owned(panel.portfolio_returns(beta)),
            Data::Series(s) => Cow::Borrowed(s),
        }
    }
}

struct Outcome {
    beta: Vec<f64>,
    gamma: f64,
    deltas: Vec<f64>,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn non_finite(what: &str, t: usize) -> UprError {
    UprError::Numerical(format!(
        "non-finite {what} at iteration {t}; try a smaller learning rate"
    ))
}

fn descend(data: Data<'_>, beta0: Vec<f64>, config: &FitConfig) -> Result<Outcome> {
    config.validate()?;
    let knots = uniform_knots(config.knots)?;
    let k = knots.len();
    let eta = config.eta;
    let mut evaluator = ObjectiveEvaluator::new(&knots, eta);

    let mut init_rng = stream(config.seed, Stream::SplineInit, 0);
    let mut jitter_rng = stream(config.seed, Stream::SplineJitter, 0);
    let mut deltas: Vec<f64> = (0..k).map(|_| init_rng.random::<f64>()).collect();
    let mut beta = beta0;
    let mut gamma = match config.gamma0 {
        Gamma0::Value(v) => v,
        Gamma0::Auto => SortedSample::new(&data.returns(&beta))?.quantile(0.01),
    };

    let p = beta.len();
    let mut adam = matches!(config.step_rule, StepRule::Adam).then(|| Adam::new(p + 1 + k));
    let check = cfg!(debug_assertions) || config.check_feasibility;

    let mut trace = Vec::with_capacity(config.max_iters.min(100_000) + 1);
    let mut calm = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut grad = vec![0.0; p + 1 + k];

    for t in 0..config.max_iters {
        let ys = data.returns(&beta);
        let spline = PreparedSpline::new(gamma, &knots, deltas.clone());
        let ev = evaluator.evaluate(&spline, &ys);
        if !ev.value.is_finite() {
            return Err(non_finite("objective", t));
        }
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            let rel = (ev.value - prev).abs() / prev.abs().max(1e-300);
            calm = if rel < config.rel_tol { calm + 1 } else { 0 };
        }
        trace.push(ev.value);
        if calm >= config.patience {
            converged = true;
            break;
        }

        let g_delta = slope_grad_to_delta_grad(&ev.slopes);
        match &data {
            Data::Panel { panel, .. } => {
                grad[..p].copy_from_slice(&beta_gradient(panel, &ev.dy));
            }
            Data::Series(_) => grad[..p].iter_mut().for_each(|g| *g = 0.0),
        }
        grad[p] = ev.gamma;
        grad[p + 1..].copy_from_slice(&g_delta);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(non_finite("gradient", t));
        }
        if let Some(adam) = adam.as_mut() {
            adam.direction(&mut grad);
        }

        let lr = match config.decay {
            LearningRateDecay::Constant => config.learning_rate,
            LearningRateDecay::InvSqrt => config.learning_rate / ((t + 1) as f64).sqrt(),
        };

        if let Data::Panel { constraints, .. } = &data {
            let beta_tilde: Vec<f64> = beta
                .iter()
                .zip(&grad[..p])
                .map(|(b, g)| b - lr * g)
                .collect();
            beta = constraints.project(&beta_tilde);
            if check {
                let v = constraints.violation(&beta);
                assert!(
                    v <= 1e-10,
                    "weights infeasible after projection (residual {v:e})"
                );
            }
        }
        gamma -= lr * grad[p];
        for (d, g) in deltas.iter_mut().zip(&grad[p + 1..]) {
            *d = (*d - lr * g).max(0.0);
        }
        if deltas[..k - 1].iter().all(|&d| d == 0.0) {
            debug!("flat spline at iteration {t}; re-jittering slopes");
            for d in deltas.iter_mut() {
                *d = jitter_rng.random::<f64>() * 1e-3;
            }
        }
        iterations = t + 1;
    }

    if !converged {
        let ys = data.returns(&beta);
        let spline = PreparedSpline::new(gamma, &knots, deltas.clone());
        let value = evaluator.value(&spline, &ys);
        if !value.is_finite() {
            return Err(non_finite("objective", iterations));
        }
        trace.push(value);
    }

    Ok(Outcome {
        beta,
        gamma,
        deltas,
        trace,
        iterations,
        converged,
    })
}

fn spline_from(outcome: &Outcome, m: usize) -> Result<SplineQuantile> {
    SplineQuantile::from_deltas(outcome.gamma, uniform_knots(m)?, &outcome.deltas)
}

/// Jointly fit portfolio weights and the spline quantile function of the
/// portfolio return under `mu_hat^T beta = mu0`, `1^T beta = 1`.
pub fn fit_upr_portfolio(panel: &ReturnPanel, config: &FitConfig) -> Result<FitResult> {
    let mu_hat = panel.mean_vector();
    let mu0 = config.mu0.resolve(&mu_hat);
    let constraints = Constraints::new(mu_hat, mu0)?;
    fit_upr_portfolio_with(panel, &constraints, config)
}

/// [`fit_upr_portfolio`] under explicit constraints.
pub fn fit_upr_portfolio_with(
    panel: &ReturnPanel,
    constraints: &Constraints,
    config: &FitConfig,
) -> Result<FitResult> {
    let p = panel.n_assets();
    if panel.n_rows() < 2 || p < 2 {
        return Err(invalid("need at least 2 rows and 2 assets"));
    }
    if constraints.n_assets() != p {
        return Err(invalid("constraint dimension does not match the panel"));
    }
    let mu = constraints.mu_hat();
    let (lo, hi) = mu
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &m| {
            (l.min(m), h.max(m))
        });
    if !constraints.is_budget_only() && !(lo..=hi).contains(&constraints.mu0()) {
        log::warn!(
            "target return {} outside the asset mean range [{lo}, {hi}]; weights will be leveraged",
            constraints.mu0()
        );
    }
    let beta0 = vec![1.0 / p as f64; p];
    let outcome = descend(Data::Panel { panel, constraints }, beta0, config)?;
    let model = spline_from(&outcome, config.knots)?;
    Ok(FitResult {
        weights: PortfolioWeights::from_constraints(
            panel.tickers().to_vec(),
            outcome.beta.clone(),
            constraints,
        ),
        model,
        objective_trace: outcome.trace,
        iterations: outcome.iterations,
        converged: outcome.converged,
    })
}

/// Fit the spline quantile model to a single return series.
pub fn fit_quantile_model(samples: &[f64], config: &FitConfig) -> Result<SplineQuantile> {
    fit_quantile_series(samples, config).map(|(m, _)| m)
}

/// [`fit_quantile_model`] that also returns the objective trace.
pub fn fit_quantile_series(
    samples: &[f64],
    config: &FitConfig,
) -> Result<(SplineQuantile, Vec<f64>)> {
    if samples.len() < 2 {
        return Err(invalid("need at least 2 samples"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(invalid("samples must be finite"));
    }
    let outcome = descend(Data::Series(samples), Vec::new(), config)?;
    Ok((spline_from(&outcome, config.knots)?, outcome.trace))
}
