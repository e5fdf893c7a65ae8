//! Small neural-network toolkit on top of `candle-core`.
//!
//! Parameters live in a [`ParamStore`] keyed by dotted names and are
//! initialised from the workbench's own seeded generators, so two runs with
//! the same seed produce bit-identical models. Dropout draws its masks from
//! the same generators for the same reason.

mod layers;
mod store;

pub use layers::{
    causal_bias, dropout, key_padding_bias, sinusoidal_embedding, Embedding, FeedForward,
    LayerNorm, Linear, Mode, MultiHeadAttention, SequenceConv, TransformerBlock,
};
pub use store::{clip_grad_norm, read_safetensors_metadata, Optimizer, ParamStore};

use candle_core::{DType, Device};

pub const DTYPE: DType = DType::F64;

pub fn device() -> Device {
    Device::Cpu
}
