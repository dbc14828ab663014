//! Run configuration: an optional TOML file with command-line overrides.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use upr_core::backtest::BacktestConfig;
use upr_core::optimizer::{FitConfig, TargetReturn};
use upr_core::risk::TruncationEta;
use upr_core::simulate::TailExperimentConfig;
use upr_core::{Result, UprError};

/// File layout:
///
/// ```toml
/// out_dir = "out"
///
/// [fit]
/// knots = 19
/// learning_rate = 0.01
///
/// [backtest]
/// window = 240
/// horizon = 60
/// models = "ew,mv,upr"
///
/// [simulate]
/// tau_fit = 0.6666666666666666
/// tau_oos = 0.75
/// models = "upr,qr,mv"
/// ```
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: Option<PathBuf>,
    pub fit: FitConfig,
    pub backtest: BacktestSection,
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestSection {
    pub window: usize,
    pub horizon: usize,
    pub keep_partial: bool,
    pub models: String,
}

impl Default for BacktestSection {
    fn default() -> Self {
        let d = BacktestConfig::default();
        BacktestSection {
            window: d.window,
            horizon: d.horizon,
            keep_partial: d.keep_partial,
            models: "ew,mv,qr,cqr1,cqr2,upr".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub tau_fit: f64,
    pub tau_oos: f64,
    pub n: usize,
    pub replications: usize,
    pub models: String,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let d = TailExperimentConfig::default();
        SimulateSection {
            tau_fit: d.tau_fit,
            tau_oos: d.tau_oos,
            n: d.n,
            replications: d.replications,
            models: "upr,qr,mv".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            UprError::InvalidInput(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| UprError::InvalidInput(format!("bad config {}: {e}", path.display())))
    }

    pub fn backtest_config(&self) -> BacktestConfig {
        BacktestConfig {
            window: self.backtest.window,
            horizon: self.backtest.horizon,
            keep_partial: self.backtest.keep_partial,
            fit: self.fit.clone(),
        }
    }

    pub fn tail_config(&self) -> TailExperimentConfig {
        TailExperimentConfig {
            tau_fit: self.simulate.tau_fit,
            tau_oos: self.simulate.tau_oos,
            n: self.simulate.n,
            replications: self.simulate.replications,
            seed: self.fit.seed,
            fit: self.fit.clone(),
            ..TailExperimentConfig::default()
        }
    }
}

/// Optimizer flags shared by every command.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct FitFlags {
    /// Lower truncation level of the risk integral.
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Number of knot intervals of the spline.
    #[arg(long, global = true)]
    pub knots: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    /// Relative objective change treated as converged.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Target return: `ew` (equal-weight expected return) or a number.
    #[arg(long, global = true)]
    pub mu0: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

pub fn parse_mu0(s: &str) -> Result<TargetReturn> {
    if s.eq_ignore_ascii_case("ew") {
        return Ok(TargetReturn::EqualWeight);
    }
    let v: f64 = s.parse().map_err(|_| {
        UprError::InvalidInput(format!("--mu0 expects 'ew' or a number, got '{s}'"))
    })?;
    if !v.is_finite() {
        return Err(UprError::InvalidInput("--mu0 must be finite".into()));
    }
    Ok(TargetReturn::Fixed(v))
}

impl FitFlags {
    pub fn apply(&self, fit: &mut FitConfig) -> Result<()> {
        if let Some(e) = self.eta {
            fit.eta = TruncationEta::new(e)?;
        }
        if let Some(k) = self.knots {
            fit.knots = k;
        }
        if let Some(lr) = self.lr {
            fit.learning_rate = lr;
        }
        if let Some(m) = self.max_iters {
            fit.max_iters = m;
        }
        if let Some(t) = self.tol {
            fit.rel_tol = t;
        }
        if let Some(m) = &self.mu0 {
            fit.mu0 = parse_mu0(m)?;
        }
        if let Some(s) = self.seed {
            fit.seed = s;
        }
        fit.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mu0_flag() {
        assert_eq!(parse_mu0("ew").unwrap(), TargetReturn::EqualWeight);
        assert_eq!(parse_mu0("0.001").unwrap(), TargetReturn::Fixed(0.001));
        assert!(parse_mu0("high").is_err());
    }

    #[test]
    fn toml_sections() {
        let c: RunConfig = toml::from_str(
            "out_dir = \"o\"\n[fit]\nknots = 9\nmu0 = { fixed = 0.002 }\n[backtest]\nwindow = 100\n",
        )
        .unwrap();
        assert_eq!(c.fit.knots, 9);
        assert_eq!(c.fit.mu0, TargetReturn::Fixed(0.002));
        assert_eq!(c.backtest.window, 100);
        assert_eq!(c.backtest.horizon, 60);
        assert!(toml::from_str::<RunConfig>("[backtest]\nbogus = 1\n").is_err());
    }

    #[test]
    fn flags_override_and_validate() {
        let mut fit = FitConfig::default();
        let flags = FitFlags {
            knots: Some(5),
            mu0: Some("ew".into()),
            ..FitFlags::default()
        };
        flags.apply(&mut fit).unwrap();
        assert_eq!(fit.knots, 5);
        let bad = FitFlags {
            lr: Some(-1.0),
            ..FitFlags::default()
        };
        assert!(bad.apply(&mut FitConfig::default()).is_err());
        let bad = FitFlags {
            eta: Some(2.0),
            ..FitFlags::default()
        };
        assert!(bad.apply(&mut FitConfig::default()).is_err());
    }
}
