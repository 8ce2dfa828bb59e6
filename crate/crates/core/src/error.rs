//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RismaError {
    /// A constructor argument violates a documented invariant.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Array dimensions do not match the configured scenario.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// No beamforming state satisfying the QoS constraint was found at the
    /// given power budget. Carries the residual of the most feasible point
    /// seen so that callers can decide whether to keep it as best effort.
    #[error("QoS constraint infeasible (worst residual {residual:.3e})")]
    QosInfeasible { residual: f64 },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RismaError>;

impl RismaError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        RismaError::Io {
            path: path.into(),
            source,
        }
    }
}
