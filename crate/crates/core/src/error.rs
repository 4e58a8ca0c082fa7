use std::io;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed notation {input:?}: {reason}")]
    MalformedNotation { input: String, reason: &'static str },

    #[error("format error at record {record}: {message}")]
    Format { record: usize, message: String },

    #[error("rule format error: {0}")]
    RuleFormat(String),

    #[error("label set is empty")]
    EmptyLabelSet,

    #[error("query code set is empty")]
    EmptyQuery,

    #[error("code {0:?} is not present in the IDF table")]
    UnknownCode(String),

    #[error("duplicate image id {0:?}")]
    DuplicateImageId(String),

    #[error("index cache format version {found} is not supported (expected {expected})")]
    IndexVersion { found: u32, expected: u32 },

    #[error("external command failed: {0}")]
    ExternalCommand(String),

    #[error("detector failed: {0}")]
    Detector(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid label document: {0}")]
    LabelDocument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(record: usize, message: impl Into<String>) -> Self {
        Error::Format {
            record,
            message: message.into(),
        }
    }

    /// True for failures of a spawned child process (detector or external reducer).
    pub fn is_external(&self) -> bool {
        matches!(self, Error::ExternalCommand(_) | Error::Detector(_))
    }
}
