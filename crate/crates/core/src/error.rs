use std::path::PathBuf;

use thiserror::Error;

use crate::lp::LpStatus;
use crate::mqgd::TrainingTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error: {0}")]
    Parse(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("tau = {0} is outside the open interval (0, 1)")]
    TauDomain(f64),

    /// The LP for one quantile level did not reach an optimum.
    #[error("solver failed at tau = {tau}: status {status:?}")]
    Solver { tau: f64, status: LpStatus },

    #[error("problem too large: {0}")]
    Guard(String),

    /// Adjacent quantile values out of order where monotonicity is required.
    #[error(
        "quantile crossing between tau[{lower}] = {lower_value} and tau[{upper}] = {upper_value}"
    )]
    Crossing {
        lower: usize,
        upper: usize,
        lower_value: f64,
        upper_value: f64,
    },

    #[error("training diverged at iteration {}: non-finite loss", .trace.stopped_at)]
    Training { trace: Box<TrainingTrace> },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
