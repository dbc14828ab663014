//! Clayton-copula data with lower tail dependence, and the three-asset tail
//! experiment built on it.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::backtest::{max_loss, ModelSpec};
use crate::error::{invalid, Result, UprError};
use crate::ingest::ReturnPanel;
use crate::optimizer::{Constraints, FitConfig};
use crate::risk::SortedSample;
use crate::rng::{stream, Stream};

/// Standard deviation of the independent third asset.
pub const X3_SD: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub tau: f64,
    pub theta: f64,
    pub lambda_l: f64,
    pub seed: u64,
}

impl CopulaSpec {
    pub fn new(tau: f64, seed: u64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(invalid(format!("Kendall's tau {tau} outside (0, 1)")));
        }
        Ok(CopulaSpec {
            tau,
            theta: 2.0 * tau / (1.0 - tau),
            lambda_l: lower_tail_dependence(tau),
            seed,
        })
    }
}

/// `2^{(tau - 1) / (2 tau)}`.
pub fn lower_tail_dependence(tau: f64) -> f64 {
    2f64.powf((tau - 1.0) / (2.0 * tau))
}

/// Clayton CDF `(u^-theta + v^-theta - 1)^(-1/theta)`.
pub fn clayton_cdf(theta: f64, u: f64, v: f64) -> f64 {
    (u.powf(-theta) + v.powf(-theta) - 1.0).powf(-1.0 / theta)
}

/// Keeps a uniform draw strictly inside (0, 1).
fn open_unit(u: f64) -> f64 {
    u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `n` Clayton pairs from replication `rep`'s substreams, by gamma frailty.
pub fn clayton_sample_rep(spec: &CopulaSpec, n: usize, rep: u64) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    let frailty =
        Gamma::new(1.0 / spec.theta, 1.0).map_err(|e| invalid(format!("frailty: {e}")))?;
    let mut rv = stream(spec.seed, Stream::CopulaFrailty, rep);
    let mut r1 = stream(spec.seed, Stream::CopulaFirst, rep);
    let mut r2 = stream(spec.seed, Stream::CopulaSecond, rep);
    let inv = -1.0 / spec.theta;
    Ok((0..n)
        .map(|_| {
            let v: f64 = frailty.sample(&mut rv);
            let e1: f64 = Exp1.sample(&mut r1);
            let e2: f64 = Exp1.sample(&mut r2);
            // ln(1 + e/v) keeps precision when v is tiny
            let u1 = ((e1 / v).ln_1p() * inv).exp();
            let u2 = ((e2 / v).ln_1p() * inv).exp();
            (open_unit(u1), open_unit(u2))
        })
        .collect())
}

pub fn clayton_sample(spec: &CopulaSpec, n: usize) -> Result<Vec<(f64, f64)>> {
    clayton_sample_rep(spec, n, 0)
}

/// Three assets: Clayton-coupled standard normals and an independent
/// `N(0, 1.3^2)`.
pub fn simulate_assets_rep(spec: &CopulaSpec, n: usize, rep: u64) -> Result<ReturnPanel> {
    let pairs = clayton_sample_rep(spec, n, rep)?;
    let normal = Normal::standard();
    let mut r3 = stream(spec.seed, Stream::IndependentAsset, rep);
    let mut flat = Vec::with_capacity(3 * n);
    for (u, v) in pairs {
        let z: f64 = r3.sample(StandardNormal);
        flat.extend([normal.inverse_cdf(u), normal.inverse_cdf(v), X3_SD * z]);
    }
    ReturnPanel::from_flat(n, vec!["X1".into(), "X2".into(), "X3".into()], flat)
}

pub fn simulate_assets(spec: &CopulaSpec, n: usize) -> Result<ReturnPanel> {
    simulate_assets_rep(spec, n, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TailExperimentConfig {
    pub tau_fit: f64,
    pub tau_oos: f64,
    /// Draws for fitting and, separately, for evaluation.
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    /// Levels of the reported lower quantile curve.
    pub curve_levels: Vec<f64>,
    pub fit: FitConfig,
}

impl Default for TailExperimentConfig {
    fn default() -> Self {
        TailExperimentConfig {
            tau_fit: 2.0 / 3.0,
            tau_oos: 2.0 / 3.0,
            n: 300,
            replications: 1,
            seed: 0,
            curve_levels: (1..=30).map(|k| k as f64 / 300.0).collect(),
            fit: FitConfig::default(),
        }
    }
}

impl TailExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        CopulaSpec::new(self.tau_fit, self.seed)?;
        CopulaSpec::new(self.tau_oos, self.seed)?;
        if self.n < 3 {
            return Err(invalid("experiment needs at least 3 draws"));
        }
        if self.replications == 0 {
            return Err(invalid("at least one replication is required"));
        }
        if self.curve_levels.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(invalid("curve levels must lie in (0, 1]"));
        }
        self.fit.validate()
    }
}

/// One model in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailOutcome {
    pub model: String,
    pub replication: usize,
    pub weights: Vec<f64>,
    pub in_sample_max_loss: f64,
    pub oos_max_loss: f64,
    /// Empirical out-of-sample quantiles at the configured levels.
    pub oos_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSummary {
    pub model: String,
    pub median_in_sample_max_loss: f64,
    pub median_oos_max_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailExperiment {
    pub config: TailExperimentConfig,
    pub outcomes: Vec<TailOutcome>,
    pub summary: Vec<TailSummary>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Fit each model on draws at `tau_fit` and evaluate on fresh draws at
/// `tau_oos`. All assets have mean zero, so only the budget constraint binds.
pub fn tail_experiment(
    models: &[ModelSpec],
    config: &TailExperimentConfig,
) -> Result<TailExperiment> {
    config.validate()?;
    if models.is_empty() {
        return Err(invalid("no models"));
    }
    let fit_spec = CopulaSpec::new(config.tau_fit, config.seed)?;
    let oos_spec = CopulaSpec::new(config.tau_oos, config.seed)?;
    let constraints = Constraints::budget_only(vec![0.0; 3]);
    let mut outcomes = Vec::with_capacity(models.len() * config.replications);
    for rep in 0..config.replications {
        // fit and evaluation samples use disjoint substreams
        let fit_panel = simulate_assets_rep(&fit_spec, config.n, 2 * rep as u64)?;
        let oos_panel = simulate_assets_rep(&oos_spec, config.n, 2 * rep as u64 + 1)?;
        for m in models {
            let (w, _) = m.fit(&fit_panel, &constraints, &config.fit)?;
            let ins = fit_panel.portfolio_returns(&w.beta);
            let oos = oos_panel.portfolio_returns(&w.beta);
            let sorted = SortedSample::new(&oos)?;
            outcomes.push(TailOutcome {
                model: m.name(),
                replication: rep,
                in_sample_max_loss: max_loss(&ins)?,
                oos_max_loss: max_loss(&oos)?,
                oos_curve: config
                    .curve_levels
                    .iter()
                    .map(|&a| sorted.quantile(a))
                    .collect(),
                weights: w.beta,
            });
        }
    }
    let summary = models
        .iter()
        .map(|m| {
            let name = m.name();
            let mine: Vec<&TailOutcome> = outcomes.iter().filter(|o| o.model == name).collect();
            TailSummary {
                median_in_sample_max_loss: median(
                    mine.iter().map(|o| o.in_sample_max_loss).collect(),
                ),
                median_oos_max_loss: median(mine.iter().map(|o| o.oos_max_loss).collect()),
                model: name,
            }
        })
        .collect();
    Ok(TailExperiment {
        config: config.clone(),
        outcomes,
        summary,
    })
}

impl TailExperiment {
    pub fn summary_for(&self, model: &str) -> Option<&TailSummary> {
        self.summary.iter().find(|s| s.model == model)
    }

    /// `model,median_in_sample_max_loss,median_oos_max_loss` rows.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "median_in_sample_max_loss", "median_oos_max_loss"])?;
        for s in &self.summary {
            w.write_record([
                s.model.clone(),
                format!("{:?}", s.median_in_sample_max_loss),
                format!("{:?}", s.median_oos_max_loss),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `alpha,quantile` rows of one model's first-replication curve.
    pub fn write_curve_csv<W: Write>(&self, model: &str, out: W) -> Result<()> {
        let o = self
            .outcomes
            .iter()
            .find(|o| o.model == model)
            .ok_or_else(|| UprError::InvalidInput(format!("no outcome for model '{model}'")))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["alpha", "quantile"])?;
        for (a, q) in self.config.curve_levels.iter().zip(&o.oos_curve) {
            w.write_record([format!("{a:?}"), format!("{q:?}")])?;
        }
        w.flush()?;
        Ok(())
    }
}
