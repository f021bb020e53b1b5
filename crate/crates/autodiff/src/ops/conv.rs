use super::expect_rank;
use crate::gemm::gemm;
use crate::{Result, Scalar, Tensor, TensorError};

const K: usize = 3;

/// Unfolds one `[C, H, W]` sample into `[C * 9, H * W]` patch columns with
/// zero padding 1.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut cols[((ci * K + ky) * K + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, x: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &cols[((ci * K + ky) * K + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
}

fn check(input: &[usize], kernel: &[usize], bias: &[usize]) -> Result<()> {
    expect_rank("conv2d", input, 4)?;
    expect_rank("conv2d", kernel, 4)?;
    if kernel[2] != K || kernel[3] != K {
        return Err(TensorError::shape(
            "conv2d",
            format!("kernel must be 3x3, got {kernel:?}"),
        ));
    }
    if kernel[1] != input[1] {
        return Err(TensorError::shape(
            "conv2d",
            format!(
                "input has {} channels but kernel expects {}",
                input[1], kernel[1]
            ),
        ));
    }
    if bias != [kernel[0]] {
        return Err(TensorError::shape(
            "conv2d",
            format!("bias shape {bias:?} does not match {} output channels", kernel[0]),
        ));
    }
    Ok(())
}

/// `[B, Cin, H, W] * [Cout, Cin, 3, 3] + [Cout] -> [B, Cout, H, W]`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    check(input.shape(), kernel.shape(), bias.shape())?;
    let &[b, cin, h, w] = input.shape() else { unreachable!() };
    let cout = kernel.shape()[0];
    let hw = h * w;
    let mut cols = vec![T::zero(); cin * K * K * hw];
    let mut out = vec![T::zero(); b * cout * hw];
    for n in 0..b {
        im2col(input.outer(n), cin, h, w, &mut cols);
        let dst = &mut out[n * cout * hw..(n + 1) * cout * hw];
        for (co, row) in dst.chunks_exact_mut(hw).enumerate() {
            row.fill(bias.data()[co]);
        }
        gemm(cout, cin * K * K, hw, kernel.data(), false, &cols, false, dst, true);
    }
    Tensor::new([b, cout, h, w], out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad: &Tensor<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let &[b, cin, h, w] = input.shape() else { unreachable!() };
    let cout = kernel.shape()[0];
    let hw = h * w;
    let ck = cin * K * K;
    let mut cols = vec![T::zero(); ck * hw];
    let mut dcols = if need_input { vec![T::zero(); ck * hw] } else { Vec::new() };
    let mut dx = if need_input { vec![T::zero(); input.len()] } else { Vec::new() };
    let mut dk = vec![T::zero(); kernel.len()];
    let mut db = vec![T::zero(); cout];
    for n in 0..b {
        let g = grad.outer(n);
        for (co, row) in g.chunks_exact(hw).enumerate() {
            db[co] += row.iter().copied().sum::<T>();
        }
        im2col(input.outer(n), cin, h, w, &mut cols);
        // dK += dY (cout x hw) * cols^T (hw x ck)
        gemm(cout, hw, ck, g, false, &cols, true, &mut dk, true);
        if need_input {
            // dcols = K^T (ck x cout) * dY (cout x hw)
            gemm(ck, cout, hw, kernel.data(), true, g, false, &mut dcols, false);
            col2im(&dcols, cin, h, w, &mut dx[n * cin * hw..(n + 1) * cin * hw]);
        }
    }
    ConvGrads {
        input: need_input.then(|| Tensor::new(input.shape().to_vec(), dx).expect("same shape")),
        kernel: Tensor::new(kernel.shape().to_vec(), dk).expect("same shape"),
        bias: Tensor::new([cout], db).expect("same shape"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_delta_kernel_is_identity() {
        let x = Tensor::<f64>::new([1, 1, 3, 4], (0..12).map(|v| v as f64).collect()).unwrap();
        let mut k = Tensor::zeros([1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let y = conv2d(&x, &k, &Tensor::zeros([1])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_kernel_on_constant_input() {
        let x = Tensor::<f64>::full([1, 1, 5, 5], 2.0);
        let y = conv2d(&x, &Tensor::ones([1, 1, 3, 3]), &Tensor::zeros([1])).unwrap();
        for yy in 1..4 {
            for xx in 1..4 {
                assert_eq!(y.data()[yy * 5 + xx], 18.0);
            }
        }
        // corners see 4 of 9 taps
        assert_eq!(y.data()[0], 8.0);
    }

    #[test]
    fn rejects_channel_mismatch_and_bad_kernel() {
        let x = Tensor::<f64>::zeros([1, 2, 4, 4]);
        let k = Tensor::zeros([3, 1, 3, 3]);
        assert!(matches!(
            conv2d(&x, &k, &Tensor::zeros([3])),
            Err(TensorError::Shape { .. })
        ));
        let k = Tensor::zeros([3, 2, 5, 5]);
        assert!(conv2d(&x, &k, &Tensor::zeros([3])).is_err());
    }

    #[test]
    fn single_column_images_are_handled() {
        let x = Tensor::<f64>::new([1, 1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let y = conv2d(&x, &Tensor::ones([1, 1, 3, 3]), &Tensor::zeros([1])).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 5.0]);
    }
}
