//! Dense-tensor CNN core: layer kernels, reverse-mode gradients, MSE and Adam.

mod adam;
pub mod gradcheck;
pub mod layers;
mod loss;
mod model;
mod tensor;
mod weights;

use std::path::PathBuf;

pub use adam::{adam_step, AdamConfig, FreezeMask};
pub use loss::{mse, mse_grad};
pub use model::{
    backward, forward, forward_from, infer, layer_number, ForwardCache, Gradients, Layer,
    ModelSpec, ModelState, Params,
};
pub use tensor::{Scalar, Tensor};
pub use weights::{
    decode_weights, encode_weights, load_weights, save_weights, state_from_entries, NamedTensor,
};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch items disagree: expected {expected:?}, found {found:?}")]
    BatchShape { expected: Vec<usize>, found: Vec<usize> },
    #[error("layer {layer} ({kind}) expects {expected}, got {found:?}")]
    LayerShape {
        layer: usize,
        kind: &'static str,
        expected: String,
        found: Vec<usize>,
    },
    #[error("input to layer {layer}: expected shape {expected:?}, found {found:?}")]
    InputShape {
        layer: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("layer range {start}..{end} is out of bounds")]
    LayerRange { start: usize, end: usize },
    #[error("expected {expected} parameter tensors, found {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("parameter {layer}: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("forward cache is stale: parameters changed since the forward pass")]
    StaleCache,
    #[error("forward cache does not cover the network")]
    MissingCache,
    #[error("loss operands disagree: prediction {pred:?}, label {label:?}")]
    LossShape { pred: Vec<usize>, label: Vec<usize> },
    #[error("every layer is frozen")]
    NothingTrainable,
    #[error("non-finite gradient in {layer}")]
    NonFiniteGradient { layer: String },
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("unsupported weights file version {0}")]
    UnsupportedVersion(u32),
    #[error("weights file truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("weights file has a non-UTF-8 entry name")]
    BadName,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
