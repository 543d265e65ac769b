use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The negative sampler needs more distinct nodes than the graph has.
    #[error("capacity exceeded: need {needed} distinct negative nodes but only {available} are active")]
    Capacity { needed: usize, available: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("quadrature did not converge: achieved relative error {achieved:.3e}, requested {requested:.1e}")]
    NonConvergence { achieved: f64, requested: f64 },

    #[error("enumeration budget exceeded: {required} cases > limit {limit}")]
    Budget { required: u128, limit: u128 },

    #[error(
        "calibration failed: target eps {target} outside bracket \
         (sigma={sigma_lo} -> eps={eps_at_lo}, sigma={sigma_hi} -> eps={eps_at_hi})"
    )]
    Calibration {
        target: f64,
        sigma_lo: f64,
        eps_at_lo: f64,
        sigma_hi: f64,
        eps_at_hi: f64,
    },

    #[error("training aborted at iteration {iteration}: {source}")]
    Training {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Unwraps a `Training` error down to its cause.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::Training { source, .. } => source.root_cause(),
            other => other,
        }
    }
}
