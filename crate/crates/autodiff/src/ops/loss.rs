use super::activation::{sigmoid_scalar, softmax_row};
use super::expect_rank;
use crate::{cast, Result, Scalar, Tensor, TensorError};

fn check_pair<T: Scalar>(op: &'static str, logits: &Tensor<T>, targets: &Tensor<T>) -> Result<()> {
    expect_rank(op, logits.shape(), 2)?;
    if logits.shape() != targets.shape() {
        return Err(TensorError::shape(
            op,
            format!(
                "logits {:?} and targets {:?} differ",
                logits.shape(),
                targets.shape()
            ),
        ));
    }
    Ok(())
}

/// Log-softmax of one row.
fn log_softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

/// Mean over the batch of `-sum_n y_n log softmax(l)_n`. Each target row must
/// be a distribution (sum 1 within 1e-6); soft targets are allowed.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
    check_pair("cross_entropy", logits, targets)?;
    let n = logits.shape()[1];
    let mut total = T::zero();
    for (row, (l, y)) in logits
        .data()
        .chunks_exact(n)
        .zip(targets.data().chunks_exact(n))
        .enumerate()
    {
        let s: T = y.iter().copied().sum();
        if (s - T::one()).abs() > cast(1e-6) || y.iter().any(|&v| v < T::zero()) {
            return Err(TensorError::InvalidTarget {
                op: "cross_entropy",
                detail: format!("row {row} is not a probability distribution (sum {s})"),
            });
        }
        let ls = log_softmax_row(l);
        total -= y.iter().zip(&ls).map(|(&yv, &lv)| yv * lv).sum::<T>();
    }
    Ok(total / cast(logits.shape()[0] as f64))
}

pub(crate) fn cross_entropy_backward<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>, grad: T) -> Tensor<T> {
    let (b, n) = (logits.shape()[0], logits.shape()[1]);
    let mut dx = logits.clone();
    let scale = grad / cast(b as f64);
    for (row, y) in dx.data_mut().chunks_exact_mut(n).zip(targets.data().chunks_exact(n)) {
        softmax_row(row);
        // targets sum to one, so d/dl = softmax - y
        row.iter_mut().zip(y).for_each(|(p, &yv)| *p = (*p - yv) * scale);
    }
    dx
}

/// `log(1 + exp(x))` without overflow.
#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Mean over the batch of `-sum_n [y log s(l) + (1-y) log(1-s(l))]`, in the
/// log-sum-exp form `softplus(l) - y l`.
pub fn binary_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
    check_pair("binary_cross_entropy", logits, targets)?;
    if targets.data().iter().any(|&y| y < T::zero() || y > T::one()) {
        return Err(TensorError::InvalidTarget {
            op: "binary_cross_entropy",
            detail: "targets must lie in [0, 1]".into(),
        });
    }
    let total: T = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&l, &y)| softplus(l) - y * l)
        .sum();
    Ok(total / cast(logits.shape()[0] as f64))
}

pub(crate) fn binary_cross_entropy_backward<T: Scalar>(
    logits: &Tensor<T>,
    targets: &Tensor<T>,
    grad: T,
) -> Tensor<T> {
    let scale = grad / cast(logits.shape()[0] as f64);
    let mut dx = logits.clone();
    for (d, &y) in dx.data_mut().iter_mut().zip(targets.data()) {
        *d = (sigmoid_scalar(*d) - y) * scale;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_n() {
        let l = Tensor::<f64>::zeros([2, 5]);
        let mut y = Tensor::zeros([2, 5]);
        y.data_mut()[1] = 1.0;
        y.data_mut()[9] = 1.0;
        assert!((cross_entropy(&l, &y).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!((binary_cross_entropy(&l, &y).unwrap() - 5.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_predictions_cost_nothing() {
        let l = Tensor::<f64>::new([1, 3], vec![1000.0, 0.0, 0.0]).unwrap();
        let y = Tensor::new([1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        assert!(cross_entropy(&l, &y).unwrap() < 1e-6);
        let l = Tensor::<f64>::new([1, 3], vec![1000.0, -1000.0, 1000.0]).unwrap();
        let y = Tensor::new([1, 3], vec![1.0, 0.0, 1.0]).unwrap();
        assert!(binary_cross_entropy(&l, &y).unwrap() < 1e-6);
    }

    #[test]
    fn rejects_non_distribution_targets() {
        let l = Tensor::<f64>::zeros([1, 2]);
        let y = Tensor::new([1, 2], vec![0.7, 0.7]).unwrap();
        assert!(matches!(
            cross_entropy(&l, &y),
            Err(TensorError::InvalidTarget { .. })
        ));
    }
}
