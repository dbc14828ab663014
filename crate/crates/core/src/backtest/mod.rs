//! Rolling-window backtests: fit every model on each window, evaluate on the
//! following rows, and summarise the concatenated out-of-sample returns.

pub mod metrics;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, UprError};
use crate::ingest::{rolling_windows_with, ReturnPanel, RollingWindow};
use crate::optimizer::{fit_upr_portfolio_with, Constraints, FitConfig};
use crate::portfolios::{
    cqr_fit, equal_weight, mean_variance, qr_fit, CqrWeighting, PortfolioWeights,
};
use crate::risk::{RiskLevelGrid, SortedSample, SplineQuantile};

pub use metrics::{
    cumulative_wealth, cumulative_wealth_compounded, cvar_01, max_drawdown, max_loss, sharpe,
    sr_test, wealth_path, MetricTable,
};

/// Environment variable capping the backtest thread pool.
pub const THREADS_ENV: &str = "UPR_OPT_THREADS";

/// A portfolio constructor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Ew,
    Mv,
    Qr {
        alpha: f64,
    },
    Cqr {
        name: String,
        grid: RiskLevelGrid,
        weighting: CqrWeighting,
    },
    Upr,
}

impl ModelSpec {
    pub fn cqr1() -> Self {
        ModelSpec::Cqr {
            name: "cqr1".into(),
            grid: RiskLevelGrid::cqr1(),
            weighting: CqrWeighting::Direct,
        }
    }

    pub fn cqr2() -> Self {
        ModelSpec::Cqr {
            name: "cqr2".into(),
            grid: RiskLevelGrid::cqr2(),
            weighting: CqrWeighting::Direct,
        }
    }

    pub fn name(&self) -> String {
        match self {
            ModelSpec::Ew => "ew".into(),
            ModelSpec::Mv => "mv".into(),
            ModelSpec::Qr { alpha } if *alpha == 0.1 => "qr".into(),
            ModelSpec::Qr { alpha } => format!("qr:{alpha}"),
            ModelSpec::Cqr { name, .. } => name.clone(),
            ModelSpec::Upr => "upr".into(),
        }
    }

    /// Fit on `panel` under `constraints`. The spline is returned for UPR only.
    pub fn fit(
        &self,
        panel: &ReturnPanel,
        constraints: &Constraints,
        config: &FitConfig,
    ) -> Result<(PortfolioWeights, Option<SplineQuantile>)> {
        Ok(match self {
            ModelSpec::Ew => {
                let w = equal_weight(panel.n_assets())?
                    .with_means(panel.tickers(), constraints.mu_hat().to_vec());
                (w, None)
            }
            ModelSpec::Mv => (mean_variance(panel, constraints)?, None),
            ModelSpec::Qr { alpha } => (qr_fit(panel, *alpha, constraints, config)?.weights, None),
            ModelSpec::Cqr {
                grid, weighting, ..
            } => (
                cqr_fit(panel, grid, *weighting, constraints, config)?.weights,
                None,
            ),
            ModelSpec::Upr => {
                let fit = fit_upr_portfolio_with(panel, constraints, config)?;
                (fit.weights, Some(fit.model))
            }
        })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ModelSpec {
    type Err = UprError;

    /// `ew`, `mv`, `qr`, `qr:<alpha>`, `cqr1`, `cqr2` or `upr`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "ew" => Ok(ModelSpec::Ew),
            "mv" => Ok(ModelSpec::Mv),
            "qr" => Ok(ModelSpec::Qr { alpha: 0.1 }),
            "cqr1" => Ok(ModelSpec::cqr1()),
            "cqr2" => Ok(ModelSpec::cqr2()),
            "upr" => Ok(ModelSpec::Upr),
            _ => {
                if let Some(a) = s.strip_prefix("qr:") {
                    let alpha: f64 = a
                        .parse()
                        .map_err(|_| invalid(format!("bad quantile level in model '{s}'")))?;
                    if !(alpha > 0.0 && alpha < 1.0) {
                        return Err(invalid(format!("quantile level {alpha} outside (0, 1)")));
                    }
                    return Ok(ModelSpec::Qr { alpha });
                }
                Err(invalid(format!(
                    "unknown model '{s}' (expected ew, mv, qr, cqr1, cqr2 or upr)"
                )))
            }
        }
    }
}

/// Parse a comma-separated model list.
pub fn parse_models(list: &str) -> Result<Vec<ModelSpec>> {
    let models: Vec<ModelSpec> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if models.is_empty() {
        return Err(invalid("empty model list"));
    }
    Ok(models)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    pub window: usize,
    pub horizon: usize,
    /// Evaluate a short trailing horizon instead of dropping it.
    pub keep_partial: bool,
    pub fit: FitConfig,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            window: 240,
            horizon: 60,
            keep_partial: true,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub window: RollingWindow,
    pub weights: PortfolioWeights,
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spline: Option<SplineQuantile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedWindow {
    pub window: RollingWindow,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrComparison {
    pub other: String,
    /// `None` when the test is undefined (unequal lengths, degenerate series).
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub model_name: String,
    pub per_window: Vec<WindowResult>,
    pub concatenated_returns: Vec<f64>,
    pub metrics: MetricTable,
    pub sr_tests: Vec<SrComparison>,
    pub failed_windows: Vec<FailedWindow>,
}

impl BacktestReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Fit `model` on one window and evaluate it on the following rows.
pub fn evaluate_window(
    panel: &ReturnPanel,
    window: RollingWindow,
    model: &ModelSpec,
    config: &FitConfig,
) -> Result<WindowResult> {
    let fit_panel = panel.slice(window.fit_start, window.fit_end)?;
    let eval_panel = panel.slice(window.eval_start, window.eval_end)?;
    let mu_hat = fit_panel.mean_vector();
    let mu0 = config.mu0.resolve(&mu_hat);
    let constraints = Constraints::with_fallback(mu_hat, mu0)?;
    if constraints.is_budget_only() {
        log::warn!(
            "window at row {}: equal asset means, enforcing the budget constraint only",
            window.fit_start
        );
    }
    let (weights, spline) = model.fit(&fit_panel, &constraints, config)?;
    Ok(WindowResult {
        window,
        returns: eval_panel.portfolio_returns(&weights.beta),
        dates: eval_panel.dates().to_vec(),
        weights,
        spline,
    })
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| {
            invalid(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))
        })?;
        if n == 0 {
            return Err(invalid(format!("{THREADS_ENV} must be positive")));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| UprError::Numerical(format!("thread pool: {e}")))
}

fn backtest_model(
    panel: &ReturnPanel,
    windows: &[RollingWindow],
    model: &ModelSpec,
    config: &FitConfig,
) -> Result<BacktestReport> {
    let outcomes: Vec<Result<WindowResult>> = windows
        .par_iter()
        .map(|&w| evaluate_window(panel, w, model, config))
        .collect();
    let mut per_window = Vec::with_capacity(windows.len());
    let mut failed_windows = Vec::new();
    for (w, outcome) in windows.iter().zip(outcomes) {
        match outcome {
            Ok(r) => per_window.push(r),
            Err(e) => {
                log::warn!("{model}: window at row {} failed: {e}", w.fit_start);
                failed_windows.push(FailedWindow {
                    window: *w,
                    error: e.to_string(),
                });
            }
        }
    }
    let concatenated_returns: Vec<f64> = per_window
        .iter()
        .flat_map(|r| r.returns.iter().copied())
        .collect();
    if concatenated_returns.is_empty() {
        return Err(UprError::Numerical(format!("{model}: every window failed")));
    }
    Ok(BacktestReport {
        model_name: model.name(),
        metrics: MetricTable::compute(&concatenated_returns)?,
        per_window,
        concatenated_returns,
        sr_tests: Vec::new(),
        failed_windows,
    })
}

/// Run the rolling protocol for every model. Reports come back in model
/// order, each with Sharpe ratio tests against the others.
pub fn run_backtest(
    panel: &ReturnPanel,
    models: &[ModelSpec],
    config: &BacktestConfig,
) -> Result<Vec<BacktestReport>> {
    config.fit.validate()?;
    if models.is_empty() {
        return Err(invalid("no models to backtest"));
    }
    let windows = rolling_windows_with(
        panel.n_rows(),
        config.window,
        config.horizon,
        config.keep_partial,
    )?;
    if windows.is_empty() {
        return Err(invalid("no complete evaluation horizon"));
    }
    let pool = thread_pool()?;
    let mut reports = pool.install(|| {
        models
            .iter()
            .map(|m| backtest_model(panel, &windows, m, &config.fit))
            .collect::<Result<Vec<_>>>()
    })?;
    attach_sr_tests(&mut reports);
    Ok(reports)
}

fn attach_sr_tests(reports: &mut [BacktestReport]) {
    let tests: Vec<Vec<SrComparison>> = reports
        .iter()
        .map(|a| {
            reports
                .iter()
                .filter(|b| b.model_name != a.model_name)
                .map(|b| SrComparison {
                    other: b.model_name.clone(),
                    z: sr_test(&a.concatenated_returns, &b.concatenated_returns).ok(),
                })
                .collect()
        })
        .collect();
    for (r, t) in reports.iter_mut().zip(tests) {
        r.sr_tests = t;
    }
}

/// Pairwise Z statistics, row model against column model.
pub fn sr_matrix(reports: &[BacktestReport]) -> Vec<Vec<Option<f64>>> {
    reports
        .iter()
        .map(|a| {
            reports
                .iter()
                .map(|b| sr_test(&a.concatenated_returns, &b.concatenated_returns).ok())
                .collect()
        })
        .collect()
}

/// `model,window,date,return` rows.
pub fn write_returns_csv<W: Write>(reports: &[BacktestReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "window", "date", "return"])?;
    for r in reports {
        for (k, win) in r.per_window.iter().enumerate() {
            for (d, x) in win.dates.iter().zip(&win.returns) {
                w.write_record([
                    r.model_name.clone(),
                    k.to_string(),
                    d.to_string(),
                    format!("{x:?}"),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// `model,metric,value` rows; an undefined Sharpe ratio is left empty.
pub fn write_metrics_csv<W: Write>(reports: &[BacktestReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "metric", "value"])?;
    for r in reports {
        for (name, v) in r.metrics.entries() {
            w.write_record([r.model_name.as_str(), name, &fmt_opt(v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Square Z matrix with a header row of model names.
pub fn write_sr_matrix_csv<W: Write>(reports: &[BacktestReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["model".to_string()];
    header.extend(reports.iter().map(|r| r.model_name.clone()));
    w.write_record(&header)?;
    for (r, row) in reports.iter().zip(sr_matrix(reports)) {
        let mut rec = vec![r.model_name.clone()];
        rec.extend(row.into_iter().map(fmt_opt));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable metric table.
pub fn format_metric_table(reports: &[BacktestReport]) -> String {
    let mut s = format!(
        "{:<8} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
        "model", "CW", "MaxLoss", "MDD", "CVaR0.1", "SR"
    );
    for r in reports {
        let m = &r.metrics;
        let sr =
            m.sr.map(|x| format!("{x:.4}"))
                .unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "{:<8} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10}\n",
            r.model_name, m.cw, m.max_loss, m.mdd, m.cvar01, sr
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileGap {
    pub alpha: f64,
    pub fitted: f64,
    pub empirical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileDiscrepancy {
    pub rows: Vec<QuantileGap>,
    /// Mean absolute gap over levels `<= 0.2`; `None` when the grid has none.
    pub lower_tail: Option<f64>,
    /// Mean absolute gap over levels `>= 0.8`.
    pub upper_tail: Option<f64>,
}

impl QuantileDiscrepancy {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["alpha", "fitted", "empirical"])?;
        for g in &self.rows {
            w.write_record([
                format!("{:?}", g.alpha),
                format!("{:?}", g.fitted),
                format!("{:?}", g.empirical),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_gap<'a>(rows: impl Iterator<Item = &'a QuantileGap>) -> Option<f64> {
    let (n, s) = rows.fold((0usize, 0.0), |(n, s), g| {
        (n + 1, s + (g.fitted - g.empirical).abs())
    });
    (n > 0).then(|| s / n as f64)
}

/// Fitted quantiles against empirical quantiles of `oos_returns` on `grid`.
pub fn quantile_discrepancy(
    model: &SplineQuantile,
    oos_returns: &[f64],
    grid: &[f64],
) -> Result<QuantileDiscrepancy> {
    if grid.is_empty() {
        return Err(invalid("empty level grid"));
    }
    let sorted = SortedSample::new(oos_returns)?;
    let rows = grid
        .iter()
        .map(|&alpha| {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(invalid(format!("level {alpha} outside (0, 1]")));
            }
            Ok(QuantileGap {
                alpha,
                fitted: model.eval(alpha)?,
                empirical: sorted.quantile(alpha),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantileDiscrepancy {
        lower_tail: mean_gap(rows.iter().filter(|g| g.alpha <= 0.2)),
        upper_tail: mean_gap(rows.iter().filter(|g| g.alpha >= 0.8)),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(n: usize, p: usize) -> ReturnPanel {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..p)
                    .map(|j| (((i * 7 + j * 13) % 17) as f64 - 8.0) / 400.0 + j as f64 * 1e-4)
                    .collect()
            })
            .collect();
        ReturnPanel::from_rows(&rows).unwrap()
    }

    #[test]
    fn parses_model_names() {
        let ms = parse_models("ew, MV,qr,cqr1,cqr2,upr,qr:0.05").unwrap();
        let names: Vec<String> = ms.iter().map(ModelSpec::name).collect();
        assert_eq!(names, ["ew", "mv", "qr", "cqr1", "cqr2", "upr", "qr:0.05"]);
        assert!("lasso".parse::<ModelSpec>().is_err());
        assert!("qr:1.5".parse::<ModelSpec>().is_err());
        assert!(parse_models(" , ").is_err());
    }

    #[test]
    fn ew_returns_are_row_means() {
        let p = panel(360, 4);
        let cfg = BacktestConfig::default();
        let reports = run_backtest(&p, &[ModelSpec::Ew], &cfg).unwrap();
        let r = &reports[0];
        assert_eq!(r.concatenated_returns.len(), 120);
        for (k, x) in r.concatenated_returns.iter().enumerate() {
            let row = p.row(240 + k);
            let mean = row.iter().map(|v| v * 0.25).sum::<f64>();
            assert!((x - mean).abs() < 1e-15);
        }
        assert!(r.sr_tests.is_empty());
    }

    #[test]
    fn too_short_panel_is_rejected() {
        let p = panel(240, 3);
        assert!(run_backtest(&p, &[ModelSpec::Ew], &BacktestConfig::default()).is_err());
    }

    #[test]
    fn discrepancy_constant() {
        let m = SplineQuantile::constant(0.3, vec![0.0, 1.0]).unwrap();
        let d = quantile_discrepancy(&m, &[0.3; 50], &[0.1, 0.5, 0.9]).unwrap();
        assert!(d.rows.iter().all(|g| g.fitted == g.empirical));
        assert_eq!(d.lower_tail, Some(0.0));
        assert_eq!(d.upper_tail, Some(0.0));
        assert!(quantile_discrepancy(&m, &[0.3], &[]).is_err());
    }
}
