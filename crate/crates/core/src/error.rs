use std::path::PathBuf;

/// Errors raised by the samplers, calculators and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A quadrature, finite-difference or sampling step failed its own check.
    #[error("numerical error: {message} (residual {residual:e})")]
    Numerical { message: String, residual: f64 },

    #[error("target is not log-concave: {0}")]
    NotLogConcave(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("feasible-start radius too large: {0}")]
    RadiusTooLarge(String),

    #[error("degenerate chain state: {0}")]
    Degenerate(String),

    #[error("effective sample size undefined: {0}")]
    UndefinedEss(String),

    #[error("sweep {iteration} failed: {source}")]
    Sweep {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn numerical(message: impl Into<String>, residual: f64) -> Self {
        Error::Numerical {
            message: message.into(),
            residual,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
