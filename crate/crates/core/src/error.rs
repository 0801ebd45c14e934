use thiserror::Error;

use crate::perturb::PerturbationSample;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("layer {index}: {message}")]
    Layer { index: usize, message: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite values in {tensor}")]
    NonFinite { tensor: String },

    #[error("backward called without a matching forward: {0}")]
    MissingForward(String),

    #[error(
        "batch-norm mode mismatch: forward ran in {forward:?}, backward requested {backward:?}"
    )]
    ModeMismatch {
        forward: crate::diffnet::BatchNormMode,
        backward: crate::diffnet::BatchNormMode,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("iteration budget of {iterations} exhausted; best anchor MSE reached {best_mse:.6}")]
    BudgetExhausted { iterations: usize, best_mse: f64 },

    #[error("batch sampling budget exhausted with {} thresholds unmet", unmet.len())]
    BatchIncomplete {
        partial: Box<Vec<PerturbationSample>>,
        unmet: Vec<f64>,
    },

    #[error("threshold sampling did not terminate after {0} draws")]
    ThresholdSampling(usize),

    #[error("non-finite loss at batch {batch}")]
    Diverged { batch: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("png: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn mismatch(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }
}
