use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("basis index {index} outside [{min}, {max}]")]
    BasisIndex { index: i64, min: i64, max: i64 },

    #[error("time {t} outside [0, {end}]")]
    TimeOutOfRange { t: f64, end: f64 },

    #[error("per-layer control queried off-grid at t = {t}")]
    OffGrid { t: f64 },

    #[error("non-finite state after step {step}")]
    NonFinite { step: usize },

    #[error("eigenvalue iteration did not converge for matrix {matrix:?}")]
    EigenNoConvergence { matrix: Vec<Vec<f64>> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("gradient check failed: relative error {error:e} exceeds {tolerance:e}")]
    GradientMismatch { error: f64, tolerance: f64 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for failures of the numerics (blow-up, eigensolver) rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::EigenNoConvergence { .. }
                | Error::Diverged { .. }
                | Error::GradientMismatch { .. }
        )
    }
}
