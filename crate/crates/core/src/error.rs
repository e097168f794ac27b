use std::fmt;

use thiserror::Error;

use crate::dynamics::ZCell;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the model, simulation and estimation layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A primitive lies outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid run or simulation configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// No simulated draw passes the stage-one entry test at a cell.
    #[error("no simulated entrants at cell {0}")]
    NoEntrants(ZCell),

    /// A regression subsample is empty or too small.
    #[error("estimation error ({subsample}): {reason}")]
    Estimation { subsample: String, reason: String },

    /// The design matrix of a regression is rank deficient.
    #[error("singular design: {0}")]
    SingularDesign(String),

    /// Input variables with no variation where variation is required.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Aggregates are missing for some panel years.
    #[error("missing aggregates for years {0:?}")]
    MissingAggregates(Vec<i32>),

    /// Schema violation while reading a CSV file.
    #[error("{path}:{line}: {reason}")]
    Ingest {
        path: String,
        line: u64,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable name of the variant, for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::NoEntrants(_) => "no_entrants",
            Error::Estimation { .. } => "estimation",
            Error::SingularDesign(_) => "singular_design",
            Error::Degenerate(_) => "degenerate",
            Error::MissingAggregates(_) => "missing_aggregates",
            Error::Ingest { .. } => "ingest",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }

    pub fn domain(msg: impl fmt::Display) -> Self {
        Error::Domain(msg.to_string())
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    pub fn estimation(subsample: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Estimation {
            subsample: subsample.into(),
            reason: reason.into(),
        }
    }
}
