//! Reverse-mode automatic differentiation over dense matrices, with the AdamW
//! optimizer, LoRA/DoRA adapters and a checkpoint container.

pub mod adapter;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

use thiserror::Error;

pub use adapter::{apply_adapter, effective_weight, merge_adapter, AdapterMethod, AdapterSpec, Adapters};
pub use checkpoint::Checkpoint;
pub use graph::{Graph, Var};
pub use optim::AdamW;
pub use params::{tensor_digest, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("{op}: {message}")]
    BadArgument { op: &'static str, message: String },
    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    DataLength { shape: [usize; 2], len: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: [usize; 2] },
    #[error("non-finite gradient for `{name}` at index {index}")]
    NonFiniteGradient { name: String, index: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("adapter target `{target}` matches no layer; available: {available:?}")]
    NoMatchingTarget { target: String, available: Vec<String> },
    #[error("adapter rank {rank} must be below min({rows}, {cols}) for `{layer}`")]
    RankTooLarge {
        layer: String,
        rank: usize,
        rows: usize,
        cols: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
