//! A small CPU neural-network engine with hand-written reverse-mode
//! gradients: the layers needed by the convolutional VAE and the MLP.
//!
//! Layers follow one pattern: `apply(&self, x)` is pure inference,
//! `forward(&mut self, x)` additionally caches what `backward` needs, and
//! `backward(&mut self, grad_out)` accumulates parameter gradients and returns
//! the gradient with respect to the layer input.

mod adam;
mod checkpoint;
mod conv;
pub mod gradcheck;
mod layers;
mod loss;
mod tensor;

use thiserror::Error;

pub use adam::{adam_update, Adam, AdamConfig};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, NamedTensor,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use conv::{
    conv2d, conv2d_input_grad, conv2d_weight_grad, conv_output_len, conv_transpose2d,
    conv_transpose_output_len, Conv2d, ConvTranspose2d,
};
pub use layers::{glorot_uniform, Dense, Dropout, GlobalAvgPool, LayerParams, Mode, Relu};
pub use loss::{mse, softmax, softmax_xent};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("backward called on `{0}` before forward")]
    GraphNotEvaluated(&'static str),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
