//! Exit codes and the mapping from library errors onto them.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Config = 2,
    Dataset = 3,
    Store = 4,
    Internal = 5,
}

#[derive(Debug)]
pub struct Failure {
    pub code: Code,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub fn fail(code: Code, error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code,
        error: error.into(),
    }
}

/// Default code of a library error raised outside any more specific context.
pub fn classify(e: &nrcid::Error) -> Code {
    use nrcid::Error::*;
    match e {
        InvalidSpec(_) | Capacity(_) => Code::Config,
        InvalidInput(_)
        | DegenerateData(_)
        | InvalidSymbol { .. }
        | InvalidDataset(_)
        | Io { .. } => Code::Dataset,
        InvalidState(_) | Decode(_) => Code::Store,
    }
}

impl From<nrcid::Error> for Failure {
    fn from(e: nrcid::Error) -> Self {
        fail(classify(&e), e)
    }
}

pub trait OrExit<T> {
    /// Tags an error with an explicit exit code.
    fn or_exit(self, code: Code) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, code: Code) -> CliResult<T> {
        self.map_err(|e| fail(code, e))
    }
}
