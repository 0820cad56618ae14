// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, MscError>;

#[derive(Debug, thiserror::Error)]
pub enum MscError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("empty view")]
    EmptyView,

    #[error("no positive pairs")]
    NoPositivePairs,

    /// `line` is 1-based; 0 marks a whole-document validation error.
    #[error("config error{}: {message}", if *line > 0 { format!(" on line {line}") } else { String::new() })]
    Config { line: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl MscError {
    pub(crate) fn parse(offset: u64, message: impl Into<String>) -> Self {
        MscError::Parse {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MscError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        MscError::InvalidInput(message.into())
    }
}
