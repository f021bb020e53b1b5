//! Forward kernels and their vector-Jacobian products.
//!
//! Each forward function is usable on its own (no tape) for inference and for
//! cross-checking; the backward halves are driven by [`crate::Tape`].

pub mod activation;
pub mod attention;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;

use crate::{Result, TensorError};

pub(crate) fn expect_rank(op: &'static str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(TensorError::shape(
            op,
            format!("expected rank {rank}, got shape {shape:?}"),
        ));
    }
    Ok(())
}
