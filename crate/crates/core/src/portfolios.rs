//! Benchmark portfolios: equal weight, mean-variance, and single / composite
//! quantile regression (mean-CVaR) portfolios.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, UprError};
use crate::ingest::ReturnPanel;
use crate::optimizer::{Constraints, FitConfig};
use crate::risk::measures::{pinball, tail_count};
use crate::risk::RiskLevelGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioWeights {
    pub tickers: Vec<String>,
    pub beta: Vec<f64>,
    /// Target return; for the equal-weight portfolio the realised `mu_hat^T beta`.
    pub mu0: f64,
    /// Sample means used by the constraint (empty when none were supplied).
    pub mu_hat: Vec<f64>,
}

impl PortfolioWeights {
    pub(crate) fn from_constraints(tickers: Vec<String>, beta: Vec<f64>, c: &Constraints) -> Self {
        PortfolioWeights {
            tickers,
            beta,
            mu0: c.mu0(),
            mu_hat: c.mu_hat().to_vec(),
        }
    }

    /// Attach sample means, recording `mu_hat^T beta` as the target.
    pub fn with_means(mut self, tickers: &[String], mu_hat: Vec<f64>) -> Self {
        self.mu0 = self.beta.iter().zip(&mu_hat).map(|(b, m)| b * m).sum();
        self.mu_hat = mu_hat;
        self.tickers = tickers.to_vec();
        self
    }

    pub fn budget_residual(&self) -> f64 {
        (self.beta.iter().sum::<f64>() - 1.0).abs()
    }

    pub fn mean_residual(&self) -> f64 {
        let m: f64 = self.beta.iter().zip(&self.mu_hat).map(|(b, m)| b * m).sum();
        (m - self.mu0).abs()
    }

    /// `ticker,weight` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["ticker", "weight"])?;
        for (t, b) in self.tickers.iter().zip(&self.beta) {
            w.write_record([t.clone(), format!("{b:?}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(1/p, ..., 1/p)`.
pub fn equal_weight(p: usize) -> Result<PortfolioWeights> {
    if p == 0 {
        return Err(invalid("equal-weight portfolio needs at least one asset"));
    }
    Ok(PortfolioWeights {
        tickers: (1..=p).map(|j| format!("X{j}")).collect(),
        beta: vec![1.0 / p as f64; p],
        mu0: 0.0,
        mu_hat: Vec::new(),
    })
}

/// Sample covariance with the `n - 1` denominator.
pub fn sample_covariance(panel: &ReturnPanel) -> DMatrix<f64> {
    let n = panel.n_rows();
    let p = panel.n_assets();
    let mu = panel.mean_vector();
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for row in panel.rows() {
        for i in 0..p {
            let di = row[i] - mu[i];
            for j in i..p {
                cov[(i, j)] += di * (row[j] - mu[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..p {
        for j in i..p {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Minimum-variance weights under the equality constraints, via the
/// two-multiplier KKT system. Falls back to a small ridge when the covariance
/// is not positive definite.
pub fn mean_variance(panel: &ReturnPanel, constraints: &Constraints) -> Result<PortfolioWeights> {
    let cov = sample_covariance(panel);
    let beta = min_variance_weights(&cov, constraints)?;
    Ok(PortfolioWeights::from_constraints(
        panel.tickers().to_vec(),
        beta,
        constraints,
    ))
}

pub fn min_variance_weights(cov: &DMatrix<f64>, constraints: &Constraints) -> Result<Vec<f64>> {
    let p = cov.nrows();
    if constraints.n_assets() != p {
        return Err(invalid(
            "constraint dimension does not match the covariance",
        ));
    }
    let chol = match cov.clone().cholesky() {
        Some(c) => c,
        None => {
            let ridge = 1e-8 * cov.trace() / p as f64;
            let mut reg = cov.clone();
            for i in 0..p {
                reg[(i, i)] += ridge;
            }
            reg.cholesky().ok_or(UprError::SingularCovariance)?
        }
    };
    let ones = DVector::from_element(p, 1.0);
    let beta = if constraints.is_budget_only() {
        let s1 = chol.solve(&ones);
        let denom = ones.dot(&s1);
        s1 / denom
    } else {
        let mu = DVector::from_column_slice(constraints.mu_hat());
        let s1 = chol.solve(&ones);
        let sm = chol.solve(&mu);
        // [1'S1 1'Sm; m'S1 m'Sm] [l1; l2] = [1; mu0]
        let a = ones.dot(&s1);
        let b = ones.dot(&sm);
        let c = mu.dot(&sm);
        let det = a * c - b * b;
        if !(det.abs() > 1e-300) {
            return Err(UprError::SingularCovariance);
        }
        let l1 = (c - b * constraints.mu0()) / det;
        let l2 = (a * constraints.mu0() - b) / det;
        s1 * l1 + sm * l2
    };
    let beta: Vec<f64> = beta.iter().copied().collect();
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(UprError::SingularCovariance);
    }
    // one projection pass removes rounding residue in the constraints
    Ok(constraints.project(&beta))
}

/// How composite-quantile level weights enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CqrWeighting {
    /// Configured weights multiply the pinball losses directly.
    #[default]
    Direct,
    /// Loss weights `w_k / alpha_k`, the discrete pessimistic risk form.
    OverLevel,
}

/// Fitted composite quantile portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub weights: PortfolioWeights,
    /// Per-level intercepts `beta_{k0}` (empirical quantiles of the fitted returns).
    pub intercepts: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

struct LevelTerm {
    alpha: f64,
    weight: f64,
}

/// Objective with exact inner minimisation over the intercepts.
fn composite_objective(ys: &[f64], terms: &[LevelTerm], sorted: &mut Vec<f64>) -> (f64, Vec<f64>) {
    sorted.clear();
    sorted.extend_from_slice(ys);
    sorted.sort_by(f64::total_cmp);
    let n = ys.len() as f64;
    let mut total = 0.0;
    let mut intercepts = Vec::with_capacity(terms.len());
    for t in terms {
        let q = sorted[tail_count(ys.len(), t.alpha) - 1];
        let loss: f64 = ys.iter().map(|y| pinball(t.alpha, y - q)).sum::<f64>() / n;
        total += t.weight * loss;
        intercepts.push(q);
    }
    (total, intercepts)
}

fn composite_fit(
    panel: &ReturnPanel,
    terms: &[LevelTerm],
    constraints: &Constraints,
    config: &FitConfig,
) -> Result<QuantileFit> {
    config.validate()?;
    let p = panel.n_assets();
    if constraints.n_assets() != p {
        return Err(invalid("constraint dimension does not match the panel"));
    }
    if panel.n_rows() < 2 {
        return Err(invalid("need at least 2 rows"));
    }
    let n = panel.n_rows() as f64;
    let mut beta = constraints.project(&vec![1.0 / p as f64; p]);
    let mut scratch = Vec::with_capacity(panel.n_rows());
    let ys = panel.portfolio_returns(&beta);
    let (mut best_val, mut best_int) = composite_objective(&ys, terms, &mut scratch);
    let mut best_beta = beta.clone();
    let mut iterations = 0;

    for t in 0..config.max_iters {
        let ys = panel.portfolio_returns(&beta);
        let (_, intercepts) = composite_objective(&ys, terms, &mut scratch);
        let mut g = vec![0.0; p];
        for (row, &y) in panel.rows().zip(&ys) {
            let mut coef = 0.0;
            for (term, &q) in terms.iter().zip(&intercepts) {
                let r = y - q;
                coef += term.weight
                    * if r < 0.0 {
                        term.alpha - 1.0
                    } else {
                        term.alpha
                    };
            }
            for (gj, x) in g.iter_mut().zip(row) {
                *gj += coef * x / n;
            }
        }
        let d = constraints.project_direction(&g);
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        iterations = t + 1;
        if !(norm > 0.0) {
            break;
        }
        // normalised subgradient steps only settle under a decaying schedule
        let lr = config.learning_rate / ((t + 1) as f64).sqrt();
        let stepped: Vec<f64> = beta
            .iter()
            .zip(&d)
            .map(|(b, v)| b - lr * v / norm)
            .collect();
        beta = constraints.project(&stepped);
        let ys = panel.portfolio_returns(&beta);
        let (val, ints) = composite_objective(&ys, terms, &mut scratch);
        if !val.is_finite() {
            return Err(UprError::Numerical(format!(
                "non-finite objective at iteration {t}"
            )));
        }
        if val < best_val {
            best_val = val;
            best_int = ints;
            best_beta.clone_from(&beta);
        }
    }

    Ok(QuantileFit {
        weights: PortfolioWeights::from_constraints(
            panel.tickers().to_vec(),
            best_beta,
            constraints,
        ),
        intercepts: best_int,
        objective: best_val,
        iterations,
    })
}

/// Single-level quantile regression (mean-CVaR) portfolio, full fit.
pub fn qr_fit(
    panel: &ReturnPanel,
    alpha: f64,
    constraints: &Constraints,
    config: &FitConfig,
) -> Result<QuantileFit> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("quantile level {alpha} outside (0, 1)")));
    }
    composite_fit(
        panel,
        &[LevelTerm { alpha, weight: 1.0 }],
        constraints,
        config,
    )
}

/// Weights minimising the mean `alpha`-pinball loss of `x^T beta - beta0`.
pub fn qr_portfolio(
    panel: &ReturnPanel,
    alpha: f64,
    constraints: &Constraints,
    config: &FitConfig,
) -> Result<PortfolioWeights> {
    qr_fit(panel, alpha, constraints, config).map(|f| f.weights)
}

/// Composite quantile regression portfolio, full fit.
pub fn cqr_fit(
    panel: &ReturnPanel,
    grid: &RiskLevelGrid,
    weighting: CqrWeighting,
    constraints: &Constraints,
    config: &FitConfig,
) -> Result<QuantileFit> {
    if grid.levels().iter().any(|&a| !(a < 1.0)) {
        return Err(invalid("composite quantile levels must lie in (0, 1)"));
    }
    let terms: Vec<LevelTerm> = grid
        .iter()
        .map(|(alpha, w)| LevelTerm {
            alpha,
            weight: match weighting {
                CqrWeighting::Direct => w,
                CqrWeighting::OverLevel => w / alpha,
            },
        })
        .collect();
    composite_fit(panel, &terms, constraints, config)
}

pub fn cqr_portfolio(
    panel: &ReturnPanel,
    grid: &RiskLevelGrid,
    constraints: &Constraints,
    config: &FitConfig,
) -> Result<PortfolioWeights> {
    cqr_fit(panel, grid, CqrWeighting::Direct, constraints, config).map(|f| f.weights)
}
