//! Empirical α-risk (expected shortfall of returns), discrete pessimistic
//! risks, and the uniform / beta-distorted pessimistic risks built on them.

use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{invalid, Result};

/// Pinball loss `(alpha - 1{z < 0}) * z`.
pub fn quantile_loss(alpha: f64, z: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("quantile level {alpha} outside (0, 1)")));
    }
    Ok(pinball(alpha, z))
}

#[inline]
pub(crate) fn pinball(alpha: f64, z: f64) -> f64 {
    if z < 0.0 {
        (alpha - 1.0) * z
    } else {
        alpha * z
    }
}

/// Number of order statistics averaged by the α-risk, `ceil(n * alpha)`.
///
/// Products that land within rounding of an integer are snapped to it, so
/// `n = 10, alpha = 0.3` averages three samples rather than four.
pub fn tail_count(n: usize, alpha: f64) -> usize {
    let x = n as f64 * alpha;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, n)
}

/// A sorted copy of a sample with prefix sums, so α-risks at many levels cost
/// O(1) each after the initial sort.
#[derive(Debug, Clone)]
pub struct SortedSample {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
}

impl SortedSample {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("empty sample"));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(invalid("sample contains non-finite values"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for &x in &sorted {
            acc += x;
            prefix.push(acc);
        }
        Ok(SortedSample { sorted, prefix })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn mean(&self) -> f64 {
        self.prefix[self.len()] / self.len() as f64
    }

    /// Lower empirical quantile: the `ceil(n * alpha)`-th order statistic.
    pub fn quantile(&self, alpha: f64) -> f64 {
        self.sorted[tail_count(self.len(), alpha) - 1]
    }

    /// Negative mean of the `ceil(n * alpha)` smallest samples.
    pub fn alpha_risk(&self, alpha: f64) -> f64 {
        let k = tail_count(self.len(), alpha);
        -self.prefix[k] / k as f64
    }
}

fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("risk level {alpha} outside (0, 1]")))
    }
}

/// Empirical α-risk: minus the average of the worst `ceil(n * alpha)` returns.
pub fn empirical_alpha_risk(samples: &[f64], alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    Ok(SortedSample::new(samples)?.alpha_risk(alpha))
}

/// Risk levels with probability weights defining a discrete pessimistic risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskLevelGrid {
    levels: Vec<f64>,
    weights: Vec<f64>,
}

impl RiskLevelGrid {
    pub fn new(levels: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || levels.len() != weights.len() {
            return Err(invalid(
                "risk grid needs equally many (>= 1) levels and weights",
            ));
        }
        for &a in &levels {
            check_level(a)?;
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("risk levels must be strictly increasing"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(invalid("risk weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("risk weights sum to {total}, expected 1")));
        }
        Ok(RiskLevelGrid { levels, weights })
    }

    /// Equal weights on `{1/K, 2/K, ..., 1}`.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("grid size K must be at least 1"));
        }
        let levels = (1..=k).map(|i| i as f64 / k as f64).collect();
        Ok(RiskLevelGrid {
            levels,
            weights: vec![1.0 / k as f64; k],
        })
    }

    /// Levels {0.1, 0.5, 0.9} with equal weights.
    pub fn cqr1() -> Self {
        RiskLevelGrid::new(vec![0.1, 0.5, 0.9], vec![1.0 / 3.0; 3]).expect("valid preset")
    }

    /// Levels {0.01, 0.1, 0.5, 0.9} with weights (0.4, 0.3, 0.2, 0.1).
    pub fn cqr2() -> Self {
        RiskLevelGrid::new(vec![0.01, 0.1, 0.5, 0.9], vec![0.4, 0.3, 0.2, 0.1])
            .expect("valid preset")
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.levels
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
    }
}

/// `sum_k w_k * rho_{alpha_k}` on the sample.
pub fn discrete_pessimistic_risk(samples: &[f64], grid: &RiskLevelGrid) -> Result<f64> {
    let sorted = SortedSample::new(samples)?;
    Ok(discrete_risk_sorted(&sorted, grid))
}

pub(crate) fn discrete_risk_sorted(sorted: &SortedSample, grid: &RiskLevelGrid) -> f64 {
    grid.iter().map(|(a, w)| w * sorted.alpha_risk(a)).sum()
}

/// Uniform pessimistic risk approximated on the `K`-point uniform level grid.
pub fn upr_via_grid(samples: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(invalid("grid size K must be at least 1"));
    }
    let sorted = SortedSample::new(samples)?;
    let kf = k as f64;
    let total: f64 = (1..=k).map(|i| sorted.alpha_risk(i as f64 / kf)).sum();
    Ok(total / kf)
}

/// Distortion of the uniform pessimistic risk, `-t ln t + t`.
pub fn distortion_phi(t: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    if !(t > 0.0 && t <= 1.0) {
        return Err(invalid(format!("distortion argument {t} outside (0, 1]")));
    }
    Ok(-t * t.ln() + t)
}

/// Beta(s, h) mixing density over risk levels; `s, h >= 1` keeps the risk pessimistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaDistortion {
    s: f64,
    h: f64,
}

impl BetaDistortion {
    pub fn new(s: f64, h: f64) -> Result<Self> {
        if !(s >= 1.0 && h >= 1.0) || !s.is_finite() || !h.is_finite() {
            return Err(invalid(format!(
                "beta distortion needs s, h >= 1 (got s={s}, h={h})"
            )));
        }
        Ok(BetaDistortion { s, h })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn density(&self, alpha: f64) -> f64 {
        let ln_norm = ln_beta(self.s, self.h);
        ((self.s - 1.0) * alpha.ln() + (self.h - 1.0) * (1.0 - alpha).ln() - ln_norm).exp()
    }
}

/// Midpoint-rule approximation of `int_0^1 rho_alpha b(alpha; s, h) d alpha`.
pub fn beta_distortion_risk(samples: &[f64], beta: BetaDistortion, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(invalid("grid size K must be at least 1"));
    }
    let sorted = SortedSample::new(samples)?;
    let kf = k as f64;
    let total: f64 = (1..=k)
        .map(|i| {
            let a = (i as f64 - 0.5) / kf;
            sorted.alpha_risk(a) * beta.density(a)
        })
        .sum();
    Ok(total / kf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinball_cases() {
        assert_eq!(quantile_loss(0.5, 1.0).unwrap(), 0.5);
        assert!((quantile_loss(0.1, -1.0).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(quantile_loss(0.3, 0.0).unwrap(), 0.0);
        assert!(quantile_loss(0.0, 1.0).is_err());
        assert!(quantile_loss(1.0, 1.0).is_err());
    }

    #[test]
    fn alpha_risk_examples() {
        let s = [-1.0, 0.0, 1.0, 2.0];
        assert_eq!(empirical_alpha_risk(&s, 0.25).unwrap(), 1.0);
        assert_eq!(empirical_alpha_risk(&s, 1.0).unwrap(), -0.5);
        assert_eq!(empirical_alpha_risk(&[3.0, 3.0, 3.0], 0.4).unwrap(), -3.0);
        assert!(empirical_alpha_risk(&[], 0.5).is_err());
        assert!(empirical_alpha_risk(&s, 0.0).is_err());
    }

    #[test]
    fn tail_count_snaps_integers() {
        assert_eq!(tail_count(10, 0.3), 3);
        assert_eq!(tail_count(10, 0.31), 4);
        assert_eq!(tail_count(20, 0.1), 2);
        assert_eq!(tail_count(7, 1e-9), 1);
        assert_eq!(tail_count(1_000_000, 0.25), 250_000);
    }

    #[test]
    fn discrete_risk_examples() {
        let s = [-1.0, 0.0, 1.0, 2.0];
        let grid = RiskLevelGrid::new(vec![0.25, 1.0], vec![0.5, 0.5]).unwrap();
        assert!((discrete_pessimistic_risk(&s, &grid).unwrap() - 0.25).abs() < 1e-15);
        let single = RiskLevelGrid::new(vec![0.25], vec![1.0]).unwrap();
        assert_eq!(discrete_pessimistic_risk(&s, &single).unwrap(), 1.0);
        assert!(
            (discrete_pessimistic_risk(&[2.0; 5], &RiskLevelGrid::cqr2()).unwrap() + 2.0).abs()
                < 1e-15
        );
    }

    #[test]
    fn grid_validation() {
        assert!(RiskLevelGrid::new(vec![0.5, 0.2], vec![0.5, 0.5]).is_err());
        assert!(RiskLevelGrid::new(vec![0.2, 0.5], vec![0.5, 0.6]).is_err());
        assert!(RiskLevelGrid::new(vec![0.0, 0.5], vec![0.5, 0.5]).is_err());
        assert!(RiskLevelGrid::new(vec![0.2, 1.5], vec![0.5, 0.5]).is_err());
        assert!(RiskLevelGrid::new(vec![], vec![]).is_err());
        assert!(RiskLevelGrid::uniform(0).is_err());
    }

    #[test]
    fn upr_constant_sample() {
        for k in [1, 7, 100] {
            assert!((upr_via_grid(&[0.7; 11], k).unwrap() + 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_values() {
        assert_eq!(distortion_phi(1.0).unwrap(), 1.0);
        let e = std::f64::consts::E;
        assert!((distortion_phi(1.0 / e).unwrap() - 2.0 / e).abs() < 1e-15);
        assert_eq!(distortion_phi(0.0).unwrap(), 0.0);
        assert!(distortion_phi(1e-300).unwrap() < 1e-296);
        assert!(distortion_phi(1.5).is_err());
        assert!(distortion_phi(-0.1).is_err());
    }

    #[test]
    fn beta_density_is_normalised() {
        for (s, h) in [(1.0, 1.0), (2.0, 1.0), (3.5, 2.0)] {
            let b = BetaDistortion::new(s, h).unwrap();
            let k = 20_000;
            let total: f64 = (1..=k)
                .map(|i| b.density((i as f64 - 0.5) / k as f64))
                .sum::<f64>()
                / k as f64;
            assert!((total - 1.0).abs() < 1e-6, "s={s} h={h} total={total}");
        }
        assert!(BetaDistortion::new(0.5, 1.0).is_err());
        assert!(BetaDistortion::new(1.0, 0.9).is_err());
    }

    #[test]
    fn beta_risk_constant_sample() {
        let b = BetaDistortion::new(2.5, 1.5).unwrap();
        assert!((beta_distortion_risk(&[-0.3; 9], b, 500).unwrap() - 0.3).abs() < 1e-3);
    }
}
