//! Forecasting models, the surrogate value network and every training loop
//! built on top of them.

pub mod audit;
pub mod data;
pub mod evaluate;
pub mod features;
pub mod finetune;
pub mod forecaster;
pub mod naive;
pub mod pretrain;
pub mod stats;
pub mod surrogate;
pub mod surrogate_train;

use feeder_autodiff::AutodiffError;
use feeder_core::dispatch::DispatchError;
use feeder_core::ingest::IngestError;
use thiserror::Error;

pub use data::Sample;
pub use forecaster::Forecaster;
pub use surrogate::{ExogFeatures, SurrogateEnsemble};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("{what} has length {got}, expected {expected}")]
    Length {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("anchor {anchor} leaves too little history for lag {lag}")]
    InsufficientHistory { anchor: usize, lag: usize },
    #[error("anchor {anchor} plus {hours} hours runs past the series end ({len})")]
    PastEnd { anchor: usize, hours: usize, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scaler `{0}` is not fitted")]
    ScalerNotFitted(&'static str),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("base weights changed during fine-tuning: {0:?}")]
    FreezeViolation(Vec<String>),
    #[error("checkpoint does not hold a {expected}: {message}")]
    BadCheckpoint { expected: &'static str, message: String },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

pub type Result<T> = std::result::Result<T, LearnError>;
