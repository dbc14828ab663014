//! Generalized extreme value law in the `F(y) = exp(-{1 - kappa (y - xi)/zeta}^{1/kappa})`
//! parameterisation, and the closed form of its beta(s, 1)-distorted risk.

use statrs::function::gamma::gamma;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gev {
    pub xi: f64,
    pub zeta: f64,
    pub kappa: f64,
}

impl Gev {
    pub fn new(xi: f64, zeta: f64, kappa: f64) -> Result<Self> {
        if !(zeta > 0.0) {
            return Err(invalid(format!("GEV scale {zeta} must be positive")));
        }
        if kappa == 0.0 || !kappa.is_finite() || !xi.is_finite() {
            return Err(invalid("GEV shape must be finite and non-zero"));
        }
        Ok(Gev { xi, zeta, kappa })
    }

    /// Quantile function `xi + zeta/kappa * (1 - (-ln t)^kappa)`.
    pub fn quantile(&self, t: f64) -> f64 {
        self.xi + self.zeta / self.kappa * (1.0 - (-t.ln()).powf(self.kappa))
    }

    pub fn mean(&self) -> Option<f64> {
        (self.kappa > -1.0)
            .then(|| self.xi + self.zeta / self.kappa * (1.0 - gamma(1.0 + self.kappa)))
    }
}

/// Closed-form beta(s, 1)-distorted risk of a GEV(xi, zeta, kappa) return.
///
/// At `s = 1` the right limit `zeta Gamma(2 + kappa)/kappa - xi - zeta/kappa` is
/// returned, which is the uniform pessimistic risk of the law.
pub fn gev_beta_risk_analytic(xi: f64, zeta: f64, kappa: f64, s: f64) -> Result<f64> {
    if !(kappa > -1.0) {
        return Err(invalid(format!(
            "GEV shape {kappa} <= -1 has no finite mean"
        )));
    }
    if kappa == 0.0 {
        return Err(invalid("GEV shape must be non-zero"));
    }
    if !(zeta > 0.0) {
        return Err(invalid(format!("GEV scale {zeta} must be positive")));
    }
    if !(s >= 1.0) {
        return Err(invalid(format!("distortion shape s = {s} must be >= 1")));
    }
    let shape_factor = if s == 1.0 {
        1.0 + kappa
    } else {
        (s - s.powf(-kappa)) / (s - 1.0)
    };
    Ok(zeta * gamma(1.0 + kappa) / kappa * shape_factor - xi - zeta / kappa)
}
