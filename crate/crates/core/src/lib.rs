//! Speech-command features: log spectrograms and MFCCs, a convolutional VAE
//! that compresses spectrogram patches, and an MLP that classifies commands
//! from either representation.

pub mod audio;
pub mod classifier;
pub mod dsp;
pub mod features;
pub mod nn;
pub mod rng;
pub mod vae;

pub use audio::{load_wav, AudioBuffer, AudioError};
pub use dsp::{DspError, Spectrogram, StftConfig, Window};
pub use nn::{NnError, Tensor};
pub use rng::Rng;
pub use vae::{VaeConfig, VaeError, VaeModel};
pub use features::{FeatureError, FeatureKind, FeatureVector, Manifest, Patch};
pub use classifier::{ClassifierConfig, ClassifierError, EvalReport, MlpModel};
