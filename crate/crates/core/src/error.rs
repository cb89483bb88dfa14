use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration. Each entry names a field path.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("invalid sample {sample_id}: {reason}")]
    InvalidSample { sample_id: String, reason: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("ingestion error ({sample_id}): {reason}")]
    Ingestion { sample_id: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("degenerate cluster {cluster}: total soft assignment {frequency:e}")]
    DegenerateCluster { cluster: usize, frequency: f64 },

    #[error("missing artifact {path}: {reason}")]
    MissingArtifact { path: PathBuf, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status associated with this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::InvalidSample { .. }
            | Error::Schema(_)
            | Error::Data(_)
            | Error::Ingestion { .. } => 3,
            Error::Numeric(_) | Error::DegenerateCluster { .. } => 4,
            Error::MissingArtifact { .. } | Error::Checkpoint(_) => 5,
            Error::Shape(_) | Error::State(_) | Error::Io { .. } => 1,
        }
    }
}
