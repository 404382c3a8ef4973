use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("token id {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("corpus too small: need at least {needed} distinct utterances, found {found}")]
    CorpusTooSmall { needed: usize, found: usize },

    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("non-finite training loss on sequence {sequence} (epoch {epoch})")]
    NonFiniteLoss { sequence: usize, epoch: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::NonFiniteLoss { .. })
    }
}
