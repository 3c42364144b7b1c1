use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter set that can never be valid (filter spec, quantizer spec, model params).
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    /// Input data that violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Training data without enough distinct values to fit the quantizer.
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("symbol {symbol} outside alphabet of size {alphabet_size}")]
    InvalidSymbol { symbol: u8, alphabet_size: usize },
    /// Model parameters whose extended alphabet does not fit the count arithmetic.
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeErrorKind {
    VersionMismatch { expected: String, found: String },
    Truncated,
    Checksum,
    Malformed(String),
}

/// Failure to decode a serialized model. `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct DecodeError {
    pub line: usize,
    pub kind: DecodeErrorKind,
}

impl DecodeError {
    pub(crate) fn new(line: usize, kind: DecodeErrorKind) -> Self {
        DecodeError { line, kind }
    }

    pub(crate) fn malformed(line: usize, msg: impl Into<String>) -> Self {
        DecodeError::new(line, DecodeErrorKind::Malformed(msg.into()))
    }
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            DecodeErrorKind::VersionMismatch { expected, found } => write!(
                f,
                "decode error at line {}: version mismatch (expected {expected:?}, found {found:?})",
                self.line
            ),
            DecodeErrorKind::Truncated => {
                write!(f, "decode error at line {}: truncated stream", self.line)
            }
            DecodeErrorKind::Checksum => {
                write!(f, "decode error at line {}: checksum mismatch", self.line)
            }
            DecodeErrorKind::Malformed(msg) => {
                write!(f, "decode error at line {}: {msg}", self.line)
            }
        }
    }
}
