//! Command implementations.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use upr_core::backtest::{
    format_metric_table, parse_models, quantile_discrepancy, run_backtest, sr_matrix,
    write_metrics_csv, write_returns_csv, write_sr_matrix_csv, BacktestReport, ModelSpec,
};
use upr_core::ingest::{load_prices, to_log_returns, ReturnPanel};
use upr_core::optimizer::{fit_upr_portfolio_with, Constraints, FitConfig};
use upr_core::portfolios::{cqr_fit, qr_fit, PortfolioWeights};
use upr_core::risk::SplineQuantile;
use upr_core::simulate::{simulate_assets_rep, tail_experiment, CopulaSpec};
use upr_core::{Result, UprError};

use crate::config::RunConfig;
use crate::{Cli, Command};

/// Level grid for emitted quantile curves.
fn curve_levels() -> Vec<f64> {
    (1..=100).map(|k| k as f64 / 100.0).collect()
}

/// Model name usable in a file name.
fn file_stem(name: &str) -> String {
    name.replace([':', '/', '\\'], "_")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| UprError::InvalidInput(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| UprError::InvalidInput(format!("cannot write {}: {e}", path.display())))
}

fn load_returns(path: &Path) -> Result<ReturnPanel> {
    ReturnPanel::load(path).map_err(|e| match e {
        UprError::Io(io) => UprError::InvalidInput(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cli.fit.apply(&mut cfg.fit)?;
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)
        .map_err(|e| UprError::InvalidInput(format!("cannot create {}: {e}", out_dir.display())))?;

    match cli.command {
        Command::Ingest { prices, out } => {
            let out = out.unwrap_or_else(|| out_dir.join("returns.csv"));
            cmd_ingest(&prices, &out)
        }
        Command::Fit { returns, model } => cmd_fit(&returns, &model, &cfg.fit, &out_dir),
        Command::Backtest {
            returns,
            models,
            window,
            horizon,
            sr_tests,
        } => {
            if let Some(m) = models {
                cfg.backtest.models = m;
            }
            if let Some(w) = window {
                cfg.backtest.window = w;
            }
            if let Some(h) = horizon {
                cfg.backtest.horizon = h;
            }
            cmd_backtest(&returns, &cfg, sr_tests, &out_dir)
        }
        Command::Simulate {
            tau_fit,
            tau_oos,
            n,
            replications,
            models,
            write_panels,
        } => {
            let s = &mut cfg.simulate;
            s.tau_fit = tau_fit.unwrap_or(s.tau_fit);
            s.tau_oos = tau_oos.unwrap_or(s.tau_oos);
            s.n = n.unwrap_or(s.n);
            s.replications = replications.unwrap_or(s.replications);
            if let Some(m) = models {
                s.models = m;
            }
            cmd_simulate(&cfg, write_panels, &out_dir)
        }
    }
}

fn cmd_ingest(prices: &Path, out: &Path) -> Result<()> {
    let panel = load_prices(prices).map_err(|e| match e {
        UprError::Io(io) => {
            UprError::InvalidInput(format!("cannot read {}: {io}", prices.display()))
        }
        other => other,
    })?;
    for t in panel.dropped() {
        eprintln!("dropped {t}: missing prices");
    }
    let returns = to_log_returns(&panel)?;
    returns.write_csv(create(out)?)?;
    println!(
        "wrote {} rows x {} assets to {}",
        returns.n_rows(),
        returns.n_assets(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct FitArtifact<'a> {
    model: String,
    weights: PortfolioWeights,
    #[serde(skip_serializing_if = "Option::is_none")]
    spline: Option<SplineQuantile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_len: Option<usize>,
    config: &'a FitConfig,
}

fn cmd_fit(returns: &Path, model: &str, fit: &FitConfig, out_dir: &Path) -> Result<()> {
    let spec: ModelSpec = model.parse()?;
    let panel = load_returns(returns)?;
    let mu_hat = panel.mean_vector();
    let constraints = Constraints::with_fallback(mu_hat.clone(), fit.mu0.resolve(&mu_hat))?;
    if constraints.is_budget_only() {
        eprintln!("warning: asset means are all equal; only the budget constraint is enforced");
    }
    let mut artifact = FitArtifact {
        model: spec.name(),
        weights: PortfolioWeights {
            tickers: Vec::new(),
            beta: Vec::new(),
            mu0: 0.0,
            mu_hat: Vec::new(),
        },
        spline: None,
        objective: None,
        iterations: None,
        converged: None,
        trace_len: None,
        config: fit,
    };
    match &spec {
        ModelSpec::Upr => {
            let r = fit_upr_portfolio_with(&panel, &constraints, fit)?;
            let first = r.objective_trace.first().copied().unwrap_or(f64::NAN);
            let last = r.objective_trace.last().copied().unwrap_or(f64::NAN);
            println!(
                "objective {first:.6} -> {last:.6} over {} iterations ({})",
                r.iterations,
                if r.converged {
                    "converged"
                } else {
                    "max_iters reached"
                }
            );
            artifact.objective = Some(last);
            artifact.iterations = Some(r.iterations);
            artifact.converged = Some(r.converged);
            artifact.trace_len = Some(r.objective_trace.len());
            artifact.weights = r.weights;
            artifact.spline = Some(r.model);
        }
        ModelSpec::Qr { alpha } => {
            let r = qr_fit(&panel, *alpha, &constraints, fit)?;
            println!(
                "objective {:.6} after {} iterations",
                r.objective, r.iterations
            );
            artifact.objective = Some(r.objective);
            artifact.iterations = Some(r.iterations);
            artifact.weights = r.weights;
        }
        ModelSpec::Cqr {
            grid, weighting, ..
        } => {
            let r = cqr_fit(&panel, grid, *weighting, &constraints, fit)?;
            println!(
                "objective {:.6} after {} iterations",
                r.objective, r.iterations
            );
            artifact.objective = Some(r.objective);
            artifact.iterations = Some(r.iterations);
            artifact.weights = r.weights;
        }
        ModelSpec::Ew | ModelSpec::Mv => {
            artifact.weights = spec.fit(&panel, &constraints, fit)?.0;
        }
    }
    for (t, b) in artifact.weights.tickers.iter().zip(&artifact.weights.beta) {
        println!("{t:<12} {b:>12.6}");
    }
    let stem = file_stem(&artifact.model);
    write_json(&out_dir.join(format!("fit_{stem}.json")), &artifact)?;
    artifact
        .weights
        .write_csv(create(&out_dir.join(format!("weights_{stem}.csv")))?)?;
    if let Some(s) = &artifact.spline {
        s.write_curve_csv(
            create(&out_dir.join(format!("curve_{stem}.csv")))?,
            &curve_levels(),
        )?;
    }
    Ok(())
}

fn write_discrepancy(report: &BacktestReport, path: &Path) -> Result<bool> {
    let mut rows = Vec::new();
    let levels: Vec<f64> = (1..=19).map(|k| k as f64 * 0.05).collect();
    for (k, w) in report.per_window.iter().enumerate() {
        if let Some(s) = &w.spline {
            for g in quantile_discrepancy(s, &w.returns, &levels)?.rows {
                rows.push((k, g));
            }
        }
    }
    if rows.is_empty() {
        return Ok(false);
    }
    let mut out = csv::Writer::from_writer(create(path)?);
    out.write_record(["window", "alpha", "fitted", "empirical"])?;
    for (k, g) in rows {
        out.write_record([
            k.to_string(),
            format!("{:?}", g.alpha),
            format!("{:?}", g.fitted),
            format!("{:?}", g.empirical),
        ])?;
    }
    out.flush()?;
    Ok(true)
}

fn cmd_backtest(returns: &Path, cfg: &RunConfig, sr_tests: bool, out_dir: &Path) -> Result<()> {
    let models = parse_models(&cfg.backtest.models)?;
    let panel = load_returns(returns)?;
    let reports = run_backtest(&panel, &models, &cfg.backtest_config())?;
    for r in &reports {
        let stem = file_stem(&r.model_name);
        fs::write(
            out_dir.join(format!("backtest_{stem}.json")),
            r.to_json()? + "\n",
        )?;
        write_discrepancy(r, &out_dir.join(format!("discrepancy_{stem}.csv")))?;
        for f in &r.failed_windows {
            eprintln!(
                "warning: {} window at row {} failed: {}",
                r.model_name, f.window.fit_start, f.error
            );
        }
    }
    write_returns_csv(&reports, create(&out_dir.join("returns_oos.csv"))?)?;
    write_metrics_csv(&reports, create(&out_dir.join("metrics.csv"))?)?;
    print!("{}", format_metric_table(&reports));
    if sr_tests {
        write_sr_matrix_csv(&reports, create(&out_dir.join("sr_tests.csv"))?)?;
        println!("\nSharpe ratio Z (row vs column)");
        let names: Vec<&str> = reports.iter().map(|r| r.model_name.as_str()).collect();
        print!("{:<8}", "");
        for n in &names {
            print!(" {n:>9}");
        }
        println!();
        for (n, row) in names.iter().zip(sr_matrix(&reports)) {
            print!("{n:<8}");
            for z in row {
                match z {
                    Some(z) => print!(" {z:>9.3}"),
                    None => print!(" {:>9}", "-"),
                }
            }
            println!();
        }
    }
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, write_panels: bool, out_dir: &Path) -> Result<()> {
    let models = parse_models(&cfg.simulate.models)?;
    let tail = cfg.tail_config();
    let exp = tail_experiment(&models, &tail)?;
    write_json(&out_dir.join("tail_experiment.json"), &exp)?;
    exp.write_summary_csv(create(&out_dir.join("tail_summary.csv"))?)?;
    for m in &models {
        let name = m.name();
        exp.write_curve_csv(
            &name,
            create(&out_dir.join(format!("tail_curve_{}.csv", file_stem(&name))))?,
        )?;
    }
    if write_panels {
        let fit_spec = CopulaSpec::new(tail.tau_fit, tail.seed)?;
        let oos_spec = CopulaSpec::new(tail.tau_oos, tail.seed)?;
        simulate_assets_rep(&fit_spec, tail.n, 0)?
            .write_csv(create(&out_dir.join("panel_fit.csv"))?)?;
        simulate_assets_rep(&oos_spec, tail.n, 1)?
            .write_csv(create(&out_dir.join("panel_oos.csv"))?)?;
    }
    println!(
        "tau_fit {:.4} tau_oos {:.4} n {} replications {}",
        tail.tau_fit, tail.tau_oos, tail.n, tail.replications
    );
    println!(
        "{:<8} {:>16} {:>16}",
        "model", "max loss (fit)", "max loss (oos)"
    );
    for s in &exp.summary {
        println!(
            "{:<8} {:>16.4} {:>16.4}",
            s.model, s.median_in_sample_max_loss, s.median_oos_max_loss
        );
    }
    Ok(())
}
