//! Speaker-recognition toolkit built around margin-based classification heads.
//!
//! The pipeline runs waveform augmentation ([`audio`]), per-bin normalized
//! amplitude spectrograms ([`features`]), a small residual CNN encoder
//! ([`nn`]), four classification losses ([`losses`]) and the identification
//! and verification metrics ([`eval`]). [`pipeline`] ties them together into
//! corpus generation, training, embedding and scoring runs.

pub mod audio;
pub mod error;
pub mod eval;
pub mod features;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod scalar;

pub use audio::{AugmentPolicy, Waveform};
pub use error::{Error, Result};
pub use eval::{DcfParams, OperatingPoint, ScoreSet};
pub use features::{FrameSpec, NormalizedSpectrogram, Spectrogram};
pub use losses::{ClassificationHead, LossConfig, LossOutput};
pub use nn::{EncoderConfig, LayerConfig, LrSchedule, OptimizerState, Params, Tensor};
pub use scalar::Scalar;
