use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("incompatible checkpoint: differing fields [{}]", .fields.join(", "))]
    Compatibility { fields: Vec<String> },

    #[error("objective mismatch: {0}")]
    ObjectiveMismatch(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end. Each error category
    /// maps to its own code so scripts can branch on the failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Compatibility { .. } | Error::ObjectiveMismatch(_) => 2,
            Error::Input(_) | Error::Encoding(_) | Error::Parse { .. } => 3,
            Error::Data(_) | Error::DegenerateBatch(_) => 4,
            Error::Format(_) | Error::Version { .. } | Error::Json(_) => 5,
            Error::Io { .. } => 6,
            Error::Numeric(_) | Error::Dimension(_) | Error::Contract(_) => 7,
            Error::Plot(_) => 8,
        }
    }
}
