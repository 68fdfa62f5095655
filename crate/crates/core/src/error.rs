//! Error type shared by the library and the command-line front end.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed or inconsistent input data (files, vectors, matrices).
    #[error("input error: {0}")]
    Input(String),
    /// A matrix violates the structural requirement that every row and column is nonzero.
    #[error("structural error: {0}")]
    Structural(String),
    /// An index outside the valid range.
    #[error("index error: {0}")]
    Index(String),
    /// Parameters that are individually valid but not accepted together.
    #[error("config error: {0}")]
    Config(String),
    /// A numerical precondition failed at run time (zero mass, invalid scale, ...).
    #[error("numerical error: {0}")]
    Numeric(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
