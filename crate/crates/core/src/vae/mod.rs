//! Convolutional VAE over spectrogram patches.
//!
//! Encoder: conv(k8,s2) → ReLU → conv(k8,s2) → ReLU → global average pool →
//! separate dense heads for the posterior mean and log-variance.
//! Decoder: dense → reshape → convᵀ(k8,s2) → ReLU → convᵀ(k8,s2) → ReLU.

mod model;
mod train;

use thiserror::Error;

use crate::dsp::DspError;
use crate::nn::NnError;

pub use model::{
    kl_divergence, traversal_values, vae_loss, ForwardPass, LatentVector, LossTerms, VaeConfig,
    VaeModel, KL_WEIGHT,
};
pub use train::{evaluate_loss, train_vae, EpochStats, PatchDataset, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum VaeError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("invalid VAE configuration: {0}")]
    InvalidConfig(String),
    #[error("latent component {index} out of range for latent size {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dataset has no training patches")]
    EmptyDataset,
    #[error("loss diverged (non-finite) at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize },
}
