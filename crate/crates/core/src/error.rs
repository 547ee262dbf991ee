use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DanceError>;

#[derive(Debug, Error)]
pub enum DanceError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("linear system is singular after {attempts} jitter retries")]
    Singular { attempts: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("label {label} out of range for {class_count} classes")]
    LabelOutOfRange { label: usize, class_count: usize },

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Coarse classification used for process exit codes and C status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

impl DanceError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        DanceError::InvalidInput(msg.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            DanceError::Io(_) => ErrorKind::Io,
            DanceError::NotPsd(_) | DanceError::Singular { .. } | DanceError::NonFinite(_) => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }
}

pub(crate) fn ensure_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(DanceError::DimensionMismatch { expected, actual });
    }
    Ok(())
}
