use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MetaError>;

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Training loss became non-finite. `epoch` is 1-based.
    #[error("numerical error: training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl MetaError {
    /// Short kind label used in CLI diagnostics and ablation cells.
    pub fn kind(&self) -> &'static str {
        match self {
            MetaError::InvalidInput(_) => "InvalidInput",
            MetaError::Numerical(_) | MetaError::Diverged { .. } => "NumericalError",
            MetaError::DegenerateInput(_) => "DegenerateInput",
            MetaError::Format(_) => "FormatError",
            MetaError::Io(_) => "IoError",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MetaError::InvalidInput(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        MetaError::Format(msg.into())
    }
}
