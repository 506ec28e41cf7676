use dreal_tensor::TensorError;
use thiserror::Error;

use crate::backbone::BlockId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Shape(#[from] TensorError),
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite {loss}{}", .block.map(|b| format!(" at block {b}")).unwrap_or_default())]
    NonFinite { loss: &'static str, block: Option<BlockId> },
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
}

pub type Result<T> = std::result::Result<T, Error>;
