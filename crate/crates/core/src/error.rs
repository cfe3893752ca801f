use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("degenerate activation: {0}")]
    DegenerateActivation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

/// Errors raised while decoding the binary bank/head formats or text configs.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },

    #[error("unsupported version {0}")]
    BadVersion(u32),

    #[error("file truncated at byte offset {offset}")]
    Truncated { offset: usize },

    #[error("non-finite payload value at element {index}")]
    NonFinitePayload { index: usize },

    #[error("invalid flag byte {value} at offset {offset}")]
    BadFlag { offset: usize, value: u8 },

    #[error("trailing data after byte offset {offset}")]
    TrailingData { offset: usize },

    #[error("dimension overflow in header")]
    DimensionOverflow,

    #[error("line {line}: {msg}")]
    Text { line: usize, msg: String },
}
