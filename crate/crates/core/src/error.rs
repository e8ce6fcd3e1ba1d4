use thiserror::Error;

use crate::model::ClusterId;

/// Errors raised by the numeric core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LhucError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("target index {index} out of range for {classes} classes (row {row})")]
    TargetOutOfRange {
        row: usize,
        index: usize,
        classes: usize,
    },

    #[error("unknown cluster id {0}")]
    UnknownCluster(ClusterId),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("trace does not match network: {0}")]
    TraceMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty adaptation set")]
    EmptyAdaptationSet,
}

pub type Result<T> = std::result::Result<T, LhucError>;
