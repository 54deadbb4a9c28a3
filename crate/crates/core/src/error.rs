use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),

    #[error("tensor `{0}` has zero length")]
    ZeroLength(String),

    #[error("shape {shape:?} does not match data length {len}")]
    ShapeMismatch { shape: Vec<usize>, len: usize },

    #[error("cannot flatten an empty tensor list")]
    EmptyArena,

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("malformed payload: {0}")]
    MalformedPayload(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("unknown destination rank {0}")]
    UnknownDestination(usize),

    #[error("endpoint closed")]
    Closed,

    #[error("operation not supported by this backend: {0}")]
    Unsupported(&'static str),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid cluster layout: {0}")]
    InvalidLayout(String),

    #[error("node {0} has no workers")]
    EmptyNodeGroup(usize),

    #[error("codec/state mismatch: {0}")]
    StateMismatch(String),

    #[error("invalid engine state: {0}")]
    InvalidState(&'static str),

    #[error("hook failed on layer {layer}: {source}")]
    Hook {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("communication failed on bucket {bucket}: {source}")]
    Comm {
        bucket: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parameters diverged at step {step}")]
    Divergence { step: u64 },

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
