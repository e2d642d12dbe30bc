use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("classification error: {0}")]
    Classification(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("basis error: {0}")]
    Basis(String),
    #[error("criticality warning: {0}")]
    Criticality(String),
    #[error("unsupported catalog schema version {found} (expected {expected})")]
    Schema { found: i64, expected: i64 },
    #[error("catalog record {index} is corrupt: {reason}")]
    Corrupt { index: usize, reason: String },
    #[error("malformed catalog: {0}")]
    Format(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
