//! Environmental sound recognition with squeeze-and-excitation convolutions
//! and a Transformer encoder.
//!
//! One network serves three tasks: acoustic scene classification, urban
//! sound tagging and anomalous machine sound detection. The crate covers the
//! whole path from audio to metrics: log-mel features, spectrogram
//! augmentation, the model, losses, training, evaluation and file formats.

pub mod augment;
pub mod data;
pub mod dataset;
mod error;
pub mod features;
pub mod matrix;
pub mod model;
pub mod objectives;
pub mod task;
pub mod training;

pub use error::{Error, Result};
pub use setrans_autodiff as autodiff;
pub use task::Task;

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 20_210_901;
