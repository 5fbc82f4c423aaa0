use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the formula.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    /// More than the tolerated fraction of bootstrap replicas failed.
    #[error("degenerate statistics: {failed} of {total} replicas failed ({first})")]
    DegenerateStatistics {
        failed: usize,
        total: usize,
        first: String,
    },

    /// A computed probability left [0, 1].
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the CLI: 2 validation, 3 numeric failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Config(_) | Error::Schema { .. } => 2,
            Error::InsufficientData(_)
            | Error::DegenerateData(_)
            | Error::FitFailure(_)
            | Error::DegenerateStatistics { .. }
            | Error::Contract(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}

/// Checks `value` is finite and inside `[lo, hi]`.
pub(crate) fn check_range(name: &str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} = {value} outside [{lo}, {hi}]"
        )))
    }
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} = {value} must be > 0")))
    }
}
