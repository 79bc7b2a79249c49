//! Error surface shared by every module.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor/operation shape disagreement; names both offending shapes.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Invalid argument to a constructor or operation.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Non-finite value detected where finiteness is required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Malformed dataset file (wrong magic, truncation, count mismatch, ...).
    #[error("dataset format error in {path}: {reason}")]
    DataFormat { path: PathBuf, reason: String },

    /// A dataset file that should exist does not.
    #[error("dataset not found: {0} (set --data-root or DATA_ROOT, see scripts/)")]
    DatasetMissing(PathBuf),

    /// Config file problems: unparseable JSON, unknown fields, bad values.
    #[error("config error: {0}")]
    Config(String),

    /// Continual-learning protocol violation (out-of-order tasks, empty task).
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 = config parse, 3 = missing dataset,
    /// 1 = any runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::DatasetMissing(_) => 3,
            _ => 1,
        }
    }
}
