//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type. Variants map one-to-one onto the failure
/// categories reported by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numerics error: {0}")]
    Numerics(String),
    #[error("determinism error: {0}")]
    Determinism(String),
    #[error("unknown token: {0}")]
    UnknownToken(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty sentence: {0}")]
    EmptySentence(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("range error: {0}")]
    Range(String),
}

impl Error {
    /// Short category tag used in CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Numerics(_) => "numerics",
            Error::Determinism(_) => "determinism",
            Error::UnknownToken(_) => "unknown-token",
            Error::Alignment(_) => "alignment",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::EmptySentence(_) => "empty-sentence",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Length(_) => "length",
            Error::Range(_) => "range",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
