//! Error type shared across the library.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("question `{id}` violates a dataset invariant: {message}")]
    Invariant { id: String, message: String },

    #[error("duplicate question id `{id}`")]
    DuplicateId { id: String },

    #[error("unresolvable template slot `{slot}` in question `{id}`")]
    TemplateSlot { id: String, slot: String },

    #[error("invalid prompt variant: {0}")]
    PromptVariant(String),

    #[error("invalid decode config: {0}")]
    DecodeConfig(String),

    #[error("authentication rejected by endpoint: {0}")]
    Auth(String),

    #[error("malformed endpoint response: {message}; payload: {payload}")]
    MalformedResponse { message: String, payload: String },

    #[error("transport: {0}")]
    Transport(String),

    #[error("judge: {0}")]
    Judge(String),

    #[error("sequence of length {0} is too short for an adjacent-pair score (need n >= 2)")]
    ShortSequence(usize),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-reportable pair: {eligible} eligible generations, need at least {required}")]
    NonReportable { eligible: usize, required: usize },

    #[error("mixed requested_count within one group: {0} vs {1}")]
    MixedRequestedCount(u32, u32),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported output format `{format}` for {artifact}")]
    UnsupportedFormat { artifact: String, format: String },

    #[error("record `{id}`: {message}")]
    Record { id: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }

    pub fn invariant(id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invariant { id: id.into(), message: message.into() }
    }

    pub fn record(id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Record { id: id.into(), message: message.into() }
    }

    /// True for failures of the surrounding system (files, network) rather
    /// than of the input data. The CLI maps these to exit code 2.
    pub fn is_io_or_transport(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Auth(_)
                | Error::MalformedResponse { .. }
                | Error::Transport(_)
                | Error::Judge(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
