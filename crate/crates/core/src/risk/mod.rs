//! Risk measures and the spline quantile model behind the uniform pessimistic
//! risk (UPR) portfolio.

pub mod gev;
pub mod measures;
pub mod objective;
pub mod spline;

pub use gev::{gev_beta_risk_analytic, Gev};
pub use measures::{
    beta_distortion_risk, discrete_pessimistic_risk, distortion_phi, empirical_alpha_risk,
    quantile_loss, tail_count, upr_via_grid, BetaDistortion, RiskLevelGrid, SortedSample,
};
pub use objective::{analytic_gradients, empirical_upr_objective, upr_objective, UprGradients};
pub use spline::{uniform_knots, SplineQuantile, TruncationEta};
