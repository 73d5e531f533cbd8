use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error in {func}: {detail}")]
    Domain { func: &'static str, detail: String },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("backward called on a tape that was already consumed")]
    TapeConsumed,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("variable {0} is not on the active tape")]
    Detached(usize),

    #[error("non-finite training loss at epoch {epoch}, step {step}; layer {layer} shrinkage: {state}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        layer: usize,
        state: String,
    },

    #[error("sampler diverged: {0}")]
    Diverged(String),

    #[error("HMC acceptance rate {rate:.3} below floor after warm-up (step size {step_size:.3e})")]
    LowAcceptance { rate: f64, step_size: f64 },

    #[error("parse error in {path:?} at byte offset {offset}: {detail}")]
    Parse {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite metric {name} = {value}")]
    NonFiniteMetric { name: &'static str, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(func: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            func,
            detail: detail.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
