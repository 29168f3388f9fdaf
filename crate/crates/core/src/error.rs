use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("empty response")]
    EmptyResponse,

    #[error("empty batch")]
    EmptyBatch,

    #[error("record {id} is missing response role `{role}`")]
    MissingRole { id: u64, role: &'static str },

    #[error("held-out set shares {count} record id(s) with the training set (first: {first})")]
    Overlap { count: usize, first: u64 },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u64, expected: u64 },

    #[error("dataset has no noise flags; analysis needs an unstripped dataset")]
    MissingNoiseFlags,

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
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

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::InvalidParameter(_)
                | Error::Config(_)
                | Error::UnknownToken(_)
                | Error::Overlap { .. }
                | Error::SchemaVersion { .. }
                | Error::Malformed { .. }
                | Error::MissingNoiseFlags
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
