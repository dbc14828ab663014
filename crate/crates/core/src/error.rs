use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Variants split into input/validation problems and numerical failures so
/// callers (the CLI in particular) can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum UprError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-positive price {value} at row {row} ({date}), column {ticker}")]
    NonPositivePrice {
        row: usize,
        date: String,
        ticker: String,
        value: f64,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(
        "degenerate mean vector: target-return constraint is redundant with the budget constraint"
    )]
    DegenerateMeans,

    #[error("singular covariance matrix")]
    SingularCovariance,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl UprError {
    /// True for failures of the numerics (bad learning rate, singular systems)
    /// rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            UprError::Numerical(_) | UprError::SingularCovariance | UprError::DegenerateMeans
        )
    }
}

pub type Result<T> = std::result::Result<T, UprError>;

pub(crate) fn invalid(msg: impl Into<String>) -> UprError {
    UprError::InvalidInput(msg.into())
}
