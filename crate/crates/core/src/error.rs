use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("numerical error: {0}")]
    Numeric(String),

    #[error("reservoir init error: {0}")]
    Init(String),

    #[error("state error: {0}")]
    State(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Coarse failure classes, used by the command line front-end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
    Io,
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config { .. } | Error::Init(_) | Error::Protocol(_) => ErrorCategory::Config,
            Error::Shape(_) | Error::Data(_) | Error::Format(_) => ErrorCategory::Data,
            Error::Numeric(_) | Error::State(_) => ErrorCategory::Numeric,
            Error::Io(_) => ErrorCategory::Io,
        }
    }
}
