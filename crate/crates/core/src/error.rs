use thiserror::Error;

/// Errors raised by the library.
///
/// `Config` variants are caller mistakes (bad inputs, violated preconditions);
/// `Numerical` variants mean a computation could not produce a trustworthy value.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("variance function is negative beyond roundoff at x = {x:?} (relative {relative:.3e})")]
    NegativeVariance { x: Vec<f64>, relative: f64 },

    #[error("non-finite importance ratio at draw {index}")]
    NonFiniteRatio { index: usize },

    #[error("smoothed reference density underflows at x = {x:?}")]
    DensityUnderflow { x: Vec<f64> },

    #[error("covariance factorization failed even with jitter {jitter:.3e}")]
    Factorization { jitter: f64 },

    #[error("tail integral does not saturate (last relative change {last_change:.3e})")]
    TailDivergence { last_change: f64 },

    #[error("lemma-2 eta condition violated: beta {beta} >= {limit}")]
    EtaCondition { beta: f64, limit: f64 },

    #[error("integration error {error:.3e} exceeds 5% of cross-rep sd {sd:.3e} at n = {n}")]
    IntegrationTooCoarse { n: usize, error: f64, sd: f64 },

    #[error("{0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the failure is a configuration problem rather than a numerical one.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::DimensionMismatch { .. } | Error::EtaCondition { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
