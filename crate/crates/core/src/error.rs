use alloc::string::String;

use thiserror::Error;

use crate::types::MetricId;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{metric} needs at least {needed} trials, {available} accumulated")]
    DegenerateTrialCount {
        metric: MetricId,
        needed: usize,
        available: usize,
    },

    #[error("stream error: {0}")]
    Stream(String),

    #[error("sample {requested} is no longer buffered (oldest available: {oldest})")]
    DataLoss { requested: u64, oldest: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("singular system after regularization (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("no data available")]
    NoData,
}

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
