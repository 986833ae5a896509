use thiserror::Error;

/// Errors produced by estimation, simulation and I/O.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("failed to converge after {iterations} iterations: {reason}")]
    NonConvergence {
        iterations: usize,
        reason: String,
        /// Best parameter vector seen before giving up.
        best: Vec<f64>,
    },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("positivity violation: propensity outside (eps, 1 - eps) for ids {ids:?}")]
    PositivityViolation { ids: Vec<i64> },

    #[error("intercept calibration failed: {0}")]
    Calibration(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid hazard: {0}")]
    InvalidHazard(String),

    #[error("bootstrap degenerate: {failed} of {iterations} replicates failed (last error: {reason})")]
    BootstrapDegenerate { failed: usize, iterations: usize, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::sync::Arc<std::io::Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Estimation,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Io { .. } => ErrorClass::Config,
            Error::Data(_) | Error::PositivityViolation { .. } | Error::OutOfRange(_) => {
                ErrorClass::Data
            }
            Error::NonConvergence { .. }
            | Error::SingularDesign(_)
            | Error::Calibration(_)
            | Error::Contract(_)
            | Error::InvalidHazard(_)
            | Error::BootstrapDegenerate { .. } => ErrorClass::Estimation,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source: std::sync::Arc::new(source),
        }
    }
}
