//! Dense row-major tensors with a tape for reverse-mode differentiation.
//!
//! Every primitive needed by a convolutional + self-attention audio classifier
//! lives here: 3x3 convolution, batch and layer normalization, pooling,
//! activations, multi-head scaled dot-product attention and the two
//! classification losses. Forward values are computed eagerly and recorded on
//! a [`Tape`]; [`Tape::backward`] replays the record in reverse.
//!
//! The engine is generic over [`Scalar`] so the same code runs in 64-bit
//! (gradient checks, determinism tests) and 32-bit (training) precision.

pub mod check;
mod error;
mod gemm;
pub mod ops;
mod param;
mod scalar;
mod tape;
mod tensor;

pub use error::TensorError;
pub use param::{Param, ParamId, ParamStore};
pub use scalar::{cast, DType, Scalar};
pub use tape::{BatchNormMode, BranchPattern, Gradients, RunningStats, Tape, Var};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Normalization epsilon shared by batch and layer normalization.
pub const NORM_EPS: f64 = 1e-5;
/// Running-statistics momentum for batch normalization.
pub const BN_MOMENTUM: f64 = 0.1;
