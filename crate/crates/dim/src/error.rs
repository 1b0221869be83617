//! Error type shared across the workbench.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DimError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("non-finite gradient encountered in {0}")]
    NonFiniteGradient(String),

    #[error("model is not differentiable; attack it through a sigmoid proxy")]
    NotDifferentiable,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DimError {
    pub fn shape(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        DimError::Shape {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        DimError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DimError>;
