use thiserror::Error;

/// Errors produced anywhere in the alignment cascade, codec or tooling.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied arguments or data that violate an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two operands disagree on dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A container, bitstream or weights file could not be parsed.
    #[error("format error: {0}")]
    Format(String),

    /// A weights table is missing a layer or holds one with the wrong shape.
    #[error("weights error in layer `{layer}`: {reason}")]
    Weights { layer: String, reason: String },

    /// An internal consistency check failed.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn weights(layer: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Weights { layer: layer.into(), reason: reason.into() }
    }

    /// Process exit code used by the `ffca` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Shape(_) | Error::Io(_) => 2,
            Error::Format(_) | Error::Weights { .. } => 3,
            Error::Invariant(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
