//! Out-of-sample performance metrics and the two-portfolio Sharpe ratio test.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, UprError};
use crate::risk::SortedSample;

fn nonempty(r: &[f64]) -> Result<()> {
    if r.is_empty() {
        Err(invalid("empty return series"))
    } else {
        Ok(())
    }
}

/// `1 + sum_t r_t`: wealth from an initial unit with returns added, not compounded.
pub fn cumulative_wealth(r: &[f64]) -> f64 {
    1.0 + r.iter().sum::<f64>()
}

/// `prod_t (1 + r_t)`, for cross-checks against the additive convention.
pub fn cumulative_wealth_compounded(r: &[f64]) -> f64 {
    r.iter().map(|x| 1.0 + x).product()
}

/// Wealth path `W_0 = 1, W_t = 1 + sum_{s<=t} r_s`.
pub fn wealth_path(r: &[f64]) -> Vec<f64> {
    let mut w = 1.0;
    std::iter::once(1.0)
        .chain(r.iter().map(|x| {
            w += x;
            w
        }))
        .collect()
}

/// Largest relative fall from a running peak of the additive wealth path (<= 0).
pub fn max_drawdown(r: &[f64]) -> Result<f64> {
    nonempty(r)?;
    // W_0 = 1 keeps the running peak positive
    let mut peak = 1.0f64;
    let mut worst = 0.0f64;
    for w in wealth_path(r) {
        peak = peak.max(w);
        worst = worst.min((w - peak) / peak);
    }
    Ok(worst)
}

/// `-min_t r_t`, floored at zero.
pub fn max_loss(r: &[f64]) -> Result<f64> {
    nonempty(r)?;
    let min = r.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((-min).max(0.0))
}

/// Negative mean of the worst `ceil(0.1 n)` returns.
pub fn cvar_01(r: &[f64]) -> Result<f64> {
    Ok(SortedSample::new(r)?.alpha_risk(0.1))
}

fn mean(r: &[f64]) -> f64 {
    r.iter().sum::<f64>() / r.len() as f64
}

/// Sample standard deviation (`n - 1` denominator).
fn sd(r: &[f64]) -> f64 {
    let m = mean(r);
    (r.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (r.len() - 1) as f64).sqrt()
}

/// Mean over sample standard deviation.
pub fn sharpe(r: &[f64]) -> Result<f64> {
    if r.len() < 2 {
        return Err(invalid("Sharpe ratio needs at least two returns"));
    }
    let s = sd(r);
    if !(s > 0.0) {
        return Err(invalid("zero-variance return series"));
    }
    Ok(r.iter().sum::<f64>() / (r.len() as f64 * s))
}

/// Z statistic for `H0: SR_i = SR_j` from the joint sample moments of two
/// return series of equal length.
pub fn sr_test(ri: &[f64], rj: &[f64]) -> Result<f64> {
    if ri.len() != rj.len() {
        return Err(invalid("Sharpe test needs series of equal length"));
    }
    let l = ri.len();
    if l < 3 {
        return Err(invalid("Sharpe test needs at least three observations"));
    }
    let (mi, mj) = (mean(ri), mean(rj));
    let (si, sj) = (sd(ri), sd(rj));
    let cov = ri
        .iter()
        .zip(rj)
        .map(|(a, b)| (a - mi) * (b - mj))
        .sum::<f64>()
        / (l - 1) as f64;
    // grouped so that swapping the series leaves theta bit-identical
    let (vi, vj) = (si * si, sj * sj);
    let sij = si * sj;
    let theta = (2.0 * (vi * vj) - 2.0 * (sij * cov) + 0.5 * ((mi * mi) * vj + (mj * mj) * vi)
        - (mi * mj) / sij * (cov * cov))
        / l as f64;
    if !(theta > 0.0) {
        return Err(UprError::Numerical(
            "Sharpe test variance is not positive (degenerate series)".into(),
        ));
    }
    Ok((mi * sj - mj * si) / theta.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub cw: f64,
    pub max_loss: f64,
    pub mdd: f64,
    pub cvar01: f64,
    /// `None` for a constant series.
    pub sr: Option<f64>,
}

impl MetricTable {
    pub fn compute(r: &[f64]) -> Result<Self> {
        Ok(MetricTable {
            cw: cumulative_wealth(r),
            max_loss: max_loss(r)?,
            mdd: max_drawdown(r)?,
            cvar01: cvar_01(r)?,
            sr: sharpe(r).ok(),
        })
    }

    /// `(name, value)` pairs in table order.
    pub fn entries(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("CW", Some(self.cw)),
            ("MaxLoss", Some(self.max_loss)),
            ("MDD", Some(self.mdd)),
            ("CVaR0.1", Some(self.cvar01)),
            ("SR", self.sr),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wealth_examples() {
        assert_eq!(cumulative_wealth(&[0.0; 5]), 1.0);
        assert!((cumulative_wealth(&[0.1, -0.2, 0.1]) - 1.0).abs() < 1e-15);
        assert_eq!(cumulative_wealth(&[0.05]), 1.05);
        assert!((cumulative_wealth_compounded(&[0.1, -0.1]) - 0.99).abs() < 1e-15);
    }

    #[test]
    fn drawdown_examples() {
        assert_eq!(max_drawdown(&[0.01, 0.02, 0.03]).unwrap(), 0.0);
        let d = max_drawdown(&[0.1, -0.2, 0.1]).unwrap();
        assert!((d - (0.9 - 1.1) / 1.1).abs() < 1e-15);
        assert!((d + 0.1818).abs() < 1e-4);
        assert_eq!(max_drawdown(&[-0.5]).unwrap(), -0.5);
        assert!(max_drawdown(&[-1.5, -0.1]).is_ok());
        assert!(max_drawdown(&[]).is_err());
    }

    #[test]
    fn loss_and_sharpe_examples() {
        assert_eq!(max_loss(&[0.02, -0.07, 0.01]).unwrap(), 0.07);
        assert_eq!(max_loss(&[0.02, 0.01]).unwrap(), 0.0);
        let s = sharpe(&[0.01, 0.03]).unwrap();
        assert!((s - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(sharpe(&[0.01, 0.01, 0.01]).is_err());
        assert!(sharpe(&[0.01]).is_err());
    }

    #[test]
    fn cvar_example() {
        let mut r = vec![0.01; 18];
        r.push(-0.05);
        r.push(-0.03);
        assert!((cvar_01(&r).unwrap() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn sr_test_symmetries() {
        let a = [0.01, -0.02, 0.03, 0.0, 0.015];
        let b = [0.02, -0.01, 0.01, 0.005, -0.004];
        assert_eq!(sr_test(&a, &a).unwrap_or(0.0), 0.0);
        let z = sr_test(&a, &b).unwrap();
        assert_eq!(sr_test(&b, &a).unwrap(), -z);
        assert!(sr_test(&a, &b[..4]).is_err());
        assert!(sr_test(&a[..2], &b[..2]).is_err());
    }
}
