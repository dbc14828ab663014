//! Portfolio optimisation under the uniform pessimistic risk.
//!
//! The crate jointly fits a portfolio weight vector and a monotone spline
//! quantile function of the portfolio return, compares the result with
//! equal-weight, mean-variance and (composite) quantile-regression portfolios
//! in rolling backtests, and ships a Clayton-copula tail-dependence simulator.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod error;
pub mod ingest;
pub mod optimizer;
pub mod portfolios;
pub mod risk;
pub mod rng;
pub mod simulate;

pub use error::{Result, UprError};
