use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error on stream: {0}")]
    Stream(#[from] std::io::Error),

    #[error("line {line}: {reason}")]
    MalformedRecord { line: u64, reason: String },

    #[error("input is missing required column {0:?}")]
    MissingColumn(String),

    #[error("review references unknown business {0:?}")]
    UnknownBusiness(String),

    #[error("degenerate population: {0}")]
    DegeneratePopulation(String),

    #[error("no users meet the eligibility threshold")]
    NoEligibleUsers,

    #[error("design matrix is rank-deficient at column {column}")]
    SingularDesign { column: usize },

    #[error("insufficient data: need at least {need}, got {got}")]
    InsufficientData { need: usize, got: usize },

    #[error("universe is empty: no restaurant meets the eligibility thresholds")]
    EmptyUniverse,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(line: u64, reason: impl Into<String>) -> Self {
        Error::MalformedRecord {
            line,
            reason: reason.into(),
        }
    }

    /// Tag an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit class: 1 = usage error, 2 = data error, 3 = internal error.
    pub fn exit_class(&self) -> u8 {
        match self {
            Error::InvalidConfig(_) => 1,
            Error::Io { .. }
            | Error::Stream(_)
            | Error::MalformedRecord { .. }
            | Error::MissingColumn(_)
            | Error::UnknownBusiness(_)
            | Error::DegeneratePopulation(_)
            | Error::NoEligibleUsers
            | Error::SingularDesign { .. }
            | Error::InsufficientData { .. }
            | Error::EmptyUniverse => 2,
            Error::Stage { source, .. } => source.exit_class(),
            Error::Json(_) => 3,
        }
    }
}
