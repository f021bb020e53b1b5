use super::expect_rank;
use crate::{cast, Result, Scalar, Tensor, TensorError};

pub struct BatchNormTrain<T> {
    pub output: Tensor<T>,
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    pub unbiased_var: Vec<T>,
}

fn check_affine<T: Scalar>(op: &'static str, c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::shape(
            op,
            format!(
                "affine parameters {:?}/{:?} do not match {c} channels",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    Ok(())
}

/// Visits each `(channel, contiguous plane)` of a `[B, C, H, W]` buffer.
fn planes<T>(data: &[T], c: usize, hw: usize) -> impl Iterator<Item = (usize, &[T])> {
    data.chunks_exact(hw).enumerate().map(move |(i, p)| (i % c, p))
}

/// Batch statistics normalization. Requires at least two values per channel.
pub fn batch_norm_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<BatchNormTrain<T>> {
    expect_rank("batch_norm2d", input.shape(), 4)?;
    let &[b, c, h, w] = input.shape() else { unreachable!() };
    check_affine("batch_norm2d", c, gamma, beta)?;
    let count = b * h * w;
    if count < 2 {
        return Err(TensorError::DegenerateBatch {
            op: "batch_norm2d",
            count,
        });
    }
    let hw = h * w;
    let n: T = cast(count as f64);
    let mut mean = vec![T::zero(); c];
    for (ch, p) in planes(input.data(), c, hw) {
        mean[ch] += p.iter().copied().sum::<T>();
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); c];
    for (ch, p) in planes(input.data(), c, hw) {
        let m = mean[ch];
        var[ch] += p.iter().map(|&x| (x - m) * (x - m)).sum::<T>();
    }
    let unbiased_var = var.iter().map(|&v| v / (n - T::one())).collect();
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let output = batch_norm_apply(input, gamma, beta, &mean, &inv_std)?;
    Ok(BatchNormTrain {
        output,
        mean,
        inv_std,
        unbiased_var,
    })
}

/// `(x - mean) * inv_std * gamma + beta` per channel.
pub fn batch_norm_apply<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
) -> Result<Tensor<T>> {
    expect_rank("batch_norm2d", input.shape(), 4)?;
    let &[_, c, h, w] = input.shape() else { unreachable!() };
    check_affine("batch_norm2d", c, gamma, beta)?;
    let hw = h * w;
    let mut out = input.clone();
    for (i, p) in out.data_mut().chunks_exact_mut(hw).enumerate() {
        let ch = i % c;
        let scale = inv_std[ch] * gamma.data()[ch];
        let shift = beta.data()[ch] - mean[ch] * scale;
        p.iter_mut().for_each(|x| *x = *x * scale + shift);
    }
    Ok(out)
}

pub(crate) struct AffineGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub(crate) fn batch_norm_backward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    grad: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    train: bool,
) -> AffineGrads<T> {
    let &[b, c, h, w] = input.shape() else { unreachable!() };
    let hw = h * w;
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ((ch, x), g) in planes(input.data(), c, hw).zip(grad.data().chunks_exact(hw)) {
        let (m, s) = (mean[ch], inv_std[ch]);
        for (&xv, &gv) in x.iter().zip(g) {
            dbeta[ch] += gv;
            dgamma[ch] += gv * (xv - m) * s;
        }
    }
    let mut dx = grad.clone();
    let n: T = cast((b * hw) as f64);
    for (i, (d, x)) in dx
        .data_mut()
        .chunks_exact_mut(hw)
        .zip(input.data().chunks_exact(hw))
        .enumerate()
    {
        let ch = i % c;
        let (m, s, gm) = (mean[ch], inv_std[ch], gamma.data()[ch]);
        if train {
            // dx = gamma * s / n * (n * dy - sum(dy) - xhat * sum(dy * xhat))
            let (sum_dy, sum_dy_xhat) = (dbeta[ch], dgamma[ch]);
            for (dv, &xv) in d.iter_mut().zip(x) {
                let xhat = (xv - m) * s;
                *dv = gm * s / n * (n * *dv - sum_dy - xhat * sum_dy_xhat);
            }
        } else {
            d.iter_mut().for_each(|dv| *dv = *dv * gm * s);
        }
    }
    AffineGrads {
        input: dx,
        gamma: Tensor::new([c], dgamma).expect("channel vector"),
        beta: Tensor::new([c], dbeta).expect("channel vector"),
    }
}

pub struct LayerNormOut<T> {
    pub output: Tensor<T>,
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes each row of the last axis to zero mean and unit variance,
/// then applies `gamma`, `beta`.
pub fn layer_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<LayerNormOut<T>> {
    let c = *input.shape().last().expect("rank >= 1");
    check_affine("layer_norm", c, gamma, beta)?;
    let n: T = cast(c as f64);
    let rows = input.len() / c;
    let mut mean = Vec::with_capacity(rows);
    let mut inv_std = Vec::with_capacity(rows);
    let mut out = input.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let m = row.iter().copied().sum::<T>() / n;
        let v = row.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / n;
        let s = T::one() / (v + eps).sqrt();
        for (j, x) in row.iter_mut().enumerate() {
            *x = (*x - m) * s * gamma.data()[j] + beta.data()[j];
        }
        mean.push(m);
        inv_std.push(s);
    }
    Ok(LayerNormOut {
        output: out,
        mean,
        inv_std,
    })
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    grad: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
) -> AffineGrads<T> {
    let c = *input.shape().last().expect("rank >= 1");
    let n: T = cast(c as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dx = grad.clone();
    let mut xhat = vec![T::zero(); c];
    let mut dxhat = vec![T::zero(); c];
    for (r, (d, x)) in dx
        .data_mut()
        .chunks_exact_mut(c)
        .zip(input.data().chunks_exact(c))
        .enumerate()
    {
        let (m, s) = (mean[r], inv_std[r]);
        for j in 0..c {
            xhat[j] = (x[j] - m) * s;
            dxhat[j] = d[j] * gamma.data()[j];
            dgamma[j] += d[j] * xhat[j];
            dbeta[j] += d[j];
        }
        let sum_d: T = dxhat.iter().copied().sum();
        let sum_dx: T = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum();
        for j in 0..c {
            d[j] = s / n * (n * dxhat[j] - sum_d - xhat[j] * sum_dx);
        }
    }
    AffineGrads {
        input: dx,
        gamma: Tensor::new([c], dgamma).expect("feature vector"),
        beta: Tensor::new([c], dbeta).expect("feature vector"),
    }
}
