//! `upr-opt`: ingest prices, fit portfolios, run rolling backtests and the
//! copula tail experiment.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::FitFlags;

#[derive(Debug, Parser)]
#[command(
    name = "upr-opt",
    version,
    about = "Uniform pessimistic risk portfolio toolkit"
)]
pub struct Cli {
    /// TOML file with `fit`, `backtest` and `simulate` sections; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for JSON and CSV outputs (created if missing).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    fit: FitFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a price CSV (date column plus one column per ticker) to log returns.
    Ingest {
        prices: PathBuf,
        /// Output file; defaults to `returns.csv` in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one portfolio model on a returns CSV.
    Fit {
        returns: PathBuf,
        /// One of upr, qr, qr:<alpha>, cqr1, cqr2, mv, ew.
        #[arg(long, default_value = "upr")]
        model: String,
    },
    /// Rolling-window backtest of several models.
    Backtest {
        returns: PathBuf,
        /// Comma-separated model list.
        #[arg(long)]
        models: Option<String>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Write and print the pairwise Sharpe ratio Z matrix.
        #[arg(long)]
        sr_tests: bool,
    },
    /// Clayton-copula tail experiment.
    Simulate {
        #[arg(long)]
        tau_fit: Option<f64>,
        #[arg(long)]
        tau_oos: Option<f64>,
        /// Draws per sample.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        models: Option<String>,
        /// Also write the first replication's fit and evaluation panels.
        #[arg(long)]
        write_panels: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
