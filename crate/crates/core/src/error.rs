use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExitError {
    #[error("invalid move: {0}")]
    InvalidMove(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("search error: {0}")]
    Search(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },
    #[error("target puts mass on illegal cell {cell}")]
    TargetSupport { cell: usize },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("elo fit error: {0}")]
    Elo(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ExitError>;
