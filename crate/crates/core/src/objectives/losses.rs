use setrans_autodiff::ops::loss;
use setrans_autodiff::{Scalar, Tensor};

use crate::Result;

/// Probabilities entering the anomaly score are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Batch mean of `-sum_n y_n log softmax(l)_n`; soft targets allowed.
pub fn ce_loss<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
    Ok(loss::cross_entropy(logits, targets)?)
}

/// Batch mean of summed per-class binary cross-entropy on `sigmoid(l)`.
pub fn bce_loss<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
    Ok(loss::binary_cross_entropy(logits, targets)?)
}

/// Mean log-odds of misclassification, `mean_b log((1 - p_b) / p_b)`.
/// Higher means more anomalous. Returns `None` for an empty window list.
pub fn anomaly_score(window_probs: &[f64]) -> Option<f64> {
    if window_probs.is_empty() {
        return None;
    }
    let total: f64 = window_probs
        .iter()
        .map(|&p| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            ((1.0 - p) / p).ln()
        })
        .sum();
    Some(total / window_probs.len() as f64)
}
