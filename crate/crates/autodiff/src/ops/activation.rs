use super::expect_rank;
use crate::{Result, Scalar, Tensor, TensorError};

/// NaN passes through so a corrupted activation is not masked as zero.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v < T::zero() { T::zero() } else { v })
}

pub(crate) fn relu_backward<T: Scalar>(out: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let mut dx = grad.clone();
    for (d, &y) in dx.data_mut().iter_mut().zip(out.data()) {
        if y <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

/// Logistic function, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_backward<T: Scalar>(out: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let mut dx = grad.clone();
    for (d, &s) in dx.data_mut().iter_mut().zip(out.data()) {
        *d = *d * s * (T::one() - s);
    }
    dx
}

/// In-place max-shifted softmax of one row.
pub fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

pub fn softmax_last<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = *x.shape().last().expect("rank >= 1");
    let mut out = x.clone();
    out.data_mut().chunks_exact_mut(n).for_each(softmax_row);
    out
}

/// Vector-Jacobian product of a softmax row: `s * (g - <g, s>)`.
pub(crate) fn softmax_row_backward<T: Scalar>(s: &[T], g: &[T], dx: &mut [T]) {
    let dot: T = s.iter().zip(g).map(|(&a, &b)| a * b).sum();
    for ((d, &sv), &gv) in dx.iter_mut().zip(s).zip(g) {
        *d = sv * (gv - dot);
    }
}

pub(crate) fn softmax_last_backward<T: Scalar>(out: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let n = *out.shape().last().expect("rank >= 1");
    let mut dx = grad.clone();
    for ((d, s), g) in dx
        .data_mut()
        .chunks_exact_mut(n)
        .zip(out.data().chunks_exact(n))
        .zip(grad.data().chunks_exact(n))
    {
        softmax_row_backward(s, g, d);
    }
    dx
}

/// `x[b, c, :, :] * w[b, c]`.
pub fn scale_channels<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("scale_channels", x.shape(), 4)?;
    if w.shape() != &x.shape()[..2] {
        return Err(TensorError::shape(
            "scale_channels",
            format!("weights {:?} do not match map {:?}", w.shape(), x.shape()),
        ));
    }
    let hw = x.shape()[2] * x.shape()[3];
    let mut out = x.clone();
    for (p, &s) in out.data_mut().chunks_exact_mut(hw).zip(w.data()) {
        p.iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

pub(crate) fn scale_channels_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let hw = x.shape()[2] * x.shape()[3];
    let mut dx = grad.clone();
    let mut dw = Tensor::zeros(w.shape().to_vec());
    for (((d, xp), &s), dwv) in dx
        .data_mut()
        .chunks_exact_mut(hw)
        .zip(x.data().chunks_exact(hw))
        .zip(w.data())
        .zip(dw.data_mut())
    {
        *dwv = d.iter().zip(xp).map(|(&g, &xv)| g * xv).sum();
        d.iter_mut().for_each(|g| *g *= s);
    }
    (dx, dw)
}

pub(crate) fn zip_with<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(
            op,
            format!("operands {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}
