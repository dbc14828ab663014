//! Euclidean projections onto the portfolio equality constraints and the
//! nonnegative cumulative slopes.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, UprError};
use crate::ingest::ReturnPanel;

/// `mu_hat^T beta = mu0` and `1^T beta = 1`, or the budget constraint alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    mu_hat: Vec<f64>,
    mu0: f64,
    budget_only: bool,
}

fn is_degenerate(mu_hat: &[f64]) -> bool {
    let p = mu_hat.len() as f64;
    let mm: f64 = mu_hat.iter().map(|m| m * m).sum();
    let sm: f64 = mu_hat.iter().sum();
    let denom = p * mm - sm * sm;
    !(denom > 1e-12 * p * mm)
}

impl Constraints {
    /// Both equality constraints. Fails when `mu_hat` is proportional to `1`.
    pub fn new(mu_hat: Vec<f64>, mu0: f64) -> Result<Self> {
        if mu_hat.is_empty() {
            return Err(invalid("no assets"));
        }
        if !mu0.is_finite() || mu_hat.iter().any(|m| !m.is_finite()) {
            return Err(invalid("target and mean returns must be finite"));
        }
        if is_degenerate(&mu_hat) {
            return Err(UprError::DegenerateMeans);
        }
        Ok(Constraints {
            mu_hat,
            mu0,
            budget_only: false,
        })
    }

    /// Sample means of the panel with target `mu0`.
    pub fn from_panel(panel: &ReturnPanel, mu0: f64) -> Result<Self> {
        Self::new(panel.mean_vector(), mu0)
    }

    /// Budget constraint only; the mean constraint is recorded but not enforced.
    /// Used when all assets share one expected return.
    pub fn budget_only(mu_hat: Vec<f64>) -> Self {
        let p = mu_hat.len() as f64;
        let mu0 = mu_hat.iter().sum::<f64>() / p;
        Constraints {
            mu_hat,
            mu0,
            budget_only: true,
        }
    }

    /// Both constraints when `mu_hat` allows, the budget constraint otherwise.
    pub fn with_fallback(mu_hat: Vec<f64>, mu0: f64) -> Result<Self> {
        match Self::new(mu_hat.clone(), mu0) {
            Err(UprError::DegenerateMeans) => Ok(Self::budget_only(mu_hat)),
            other => other,
        }
    }

    pub fn mu_hat(&self) -> &[f64] {
        &self.mu_hat
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    pub fn is_budget_only(&self) -> bool {
        self.budget_only
    }

    pub fn n_assets(&self) -> usize {
        self.mu_hat.len()
    }

    pub fn project(&self, beta_tilde: &[f64]) -> Vec<f64> {
        if self.budget_only {
            project_budget(beta_tilde)
        } else {
            lagrange_projection(beta_tilde, &self.mu_hat, self.mu0)
        }
    }

    /// Project a direction onto the constraints' null space.
    pub fn project_direction(&self, g: &[f64]) -> Vec<f64> {
        let p = g.len() as f64;
        if self.budget_only {
            let s: f64 = g.iter().sum::<f64>() / p;
            return g.iter().map(|x| x - s).collect();
        }
        // projection of g onto {1^T v = 0, mu^T v = 0}
        let (e1, e2) = multipliers(g, &self.mu_hat, 0.0, 0.0);
        g.iter()
            .zip(&self.mu_hat)
            .map(|(x, m)| x - e1 - e2 * m)
            .collect()
    }

    /// Largest absolute residual of the enforced constraints.
    pub fn violation(&self, beta: &[f64]) -> f64 {
        let budget = (beta.iter().sum::<f64>() - 1.0).abs();
        if self.budget_only {
            budget
        } else {
            let mean: f64 = beta.iter().zip(&self.mu_hat).map(|(b, m)| b * m).sum();
            budget.max((mean - self.mu0).abs())
        }
    }
}

/// Lagrange multipliers `(eta1, eta2)` of the two-constraint projection with
/// budget target `budget` and mean target `mu0`.
fn multipliers(beta_tilde: &[f64], mu: &[f64], budget: f64, mu0: f64) -> (f64, f64) {
    let p = beta_tilde.len() as f64;
    let mm: f64 = mu.iter().map(|m| m * m).sum();
    let sm: f64 = mu.iter().sum();
    let sb: f64 = beta_tilde.iter().sum();
    let mb: f64 = mu.iter().zip(beta_tilde).map(|(m, b)| m * b).sum();
    let denom = p * mm - sm * sm;
    let eta1 = (mm * (sb - budget) - sm * (mb - mu0)) / denom;
    let eta2 = (sm * sb - sm * budget - p * mb + p * mu0) / (sm * sm - p * mm);
    (eta1, eta2)
}

fn lagrange_projection(beta_tilde: &[f64], mu: &[f64], mu0: f64) -> Vec<f64> {
    let (eta1, eta2) = multipliers(beta_tilde, mu, 1.0, mu0);
    beta_tilde
        .iter()
        .zip(mu)
        .map(|(b, m)| b - eta1 - eta2 * m)
        .collect()
}

fn project_budget(beta_tilde: &[f64]) -> Vec<f64> {
    let p = beta_tilde.len() as f64;
    let shift = (beta_tilde.iter().sum::<f64>() - 1.0) / p;
    beta_tilde.iter().map(|b| b - shift).collect()
}

/// Nearest point of `{mu_hat^T beta = mu0, 1^T beta = 1}` to `beta_tilde`.
pub fn project_weights(beta_tilde: &[f64], mu_hat: &[f64], mu0: f64) -> Result<Vec<f64>> {
    if beta_tilde.len() != mu_hat.len() {
        return Err(invalid("weight and mean vectors differ in length"));
    }
    let c = Constraints::new(mu_hat.to_vec(), mu0)?;
    Ok(c.project(beta_tilde))
}

/// Elementwise `max(delta, 0)`.
pub fn project_deltas(deltas: &[f64]) -> Vec<f64> {
    deltas.iter().map(|d| d.max(0.0)).collect()
}
