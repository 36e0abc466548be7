use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{name} = {value} is not a probability in [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },

    #[error("{name} = {value} must lie in [{eps:e}, 1 - {eps:e}] for this computation")]
    NotInterior {
        name: &'static str,
        value: f64,
        eps: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("sample size {n} exceeds the enumeration limit {limit}; use the Monte Carlo harness instead")]
    EnumerationTooLarge { n: u32, limit: u32 },

    #[error("all {replicates} replicates were degenerate for the {estimator} estimator under the drop policy")]
    AllDegenerate {
        estimator: &'static str,
        replicates: u64,
    },

    #[error("parameter input: {0}")]
    Params(String),

    #[error("sweep specification: {0}")]
    Sweep(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Usage-level problems (bad input files) as opposed to numeric domain failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Params(_) | Error::Sweep(_) | Error::Io { .. } | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
