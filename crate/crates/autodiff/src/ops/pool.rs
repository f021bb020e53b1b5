use super::expect_rank;
use crate::{cast, Result, Scalar, Tensor, TensorError};

fn dims4(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    expect_rank(op, shape, 4)?;
    Ok((shape[0], shape[1], shape[2], shape[3]))
}

/// 2x2 mean pooling with stride 2. Odd spatial extents are rejected.
pub fn avg_pool2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4("avg_pool2d", input.shape())?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::shape(
            "avg_pool2d",
            format!("spatial dims must be even, got {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter: T = cast(0.25);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in input.data().chunks_exact(h * w) {
        for y in 0..oh {
            let r0 = &plane[2 * y * w..(2 * y + 1) * w];
            let r1 = &plane[(2 * y + 1) * w..(2 * y + 2) * w];
            for x in 0..ow {
                out.push((r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * quarter);
            }
        }
    }
    Tensor::new([b, c, oh, ow], out)
}

pub(crate) fn avg_pool2_backward<T: Scalar>(shape: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (shape[2], shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    let quarter: T = cast(0.25);
    let mut dx = Tensor::zeros(shape.to_vec());
    for (plane, g) in dx
        .data_mut()
        .chunks_exact_mut(h * w)
        .zip(grad.data().chunks_exact(oh * ow))
    {
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = g[(y / 2) * ow + x / 2] * quarter;
            }
        }
    }
    dx
}

/// Bin `i` of `bins` covers rows `floor(i*h/bins) .. floor((i+1)*h/bins)`.
fn bin_bounds(i: usize, h: usize, bins: usize) -> (usize, usize) {
    (i * h / bins, (i + 1) * h / bins)
}

/// `[B, C, H, W] -> [B, C, bins, 1]`; needs `H >= bins`.
pub fn adaptive_avg_pool<T: Scalar>(input: &Tensor<T>, bins: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4("adaptive_avg_pool2d", input.shape())?;
    if bins == 0 || h < bins {
        return Err(TensorError::shape(
            "adaptive_avg_pool2d",
            format!("time extent {h} is smaller than the {bins} output bins"),
        ));
    }
    let mut out = Vec::with_capacity(b * c * bins);
    for plane in input.data().chunks_exact(h * w) {
        for i in 0..bins {
            let (lo, hi) = bin_bounds(i, h, bins);
            let s: T = plane[lo * w..hi * w].iter().copied().sum();
            out.push(s / cast(((hi - lo) * w) as f64));
        }
    }
    Tensor::new([b, c, bins, 1], out)
}

pub(crate) fn adaptive_avg_pool_backward<T: Scalar>(
    shape: &[usize],
    bins: usize,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let (h, w) = (shape[2], shape[3]);
    let mut dx = Tensor::zeros(shape.to_vec());
    for (plane, g) in dx
        .data_mut()
        .chunks_exact_mut(h * w)
        .zip(grad.data().chunks_exact(bins))
    {
        for (i, &gv) in g.iter().enumerate() {
            let (lo, hi) = bin_bounds(i, h, bins);
            let share = gv / cast(((hi - lo) * w) as f64);
            plane[lo * w..hi * w].iter_mut().for_each(|d| *d = share);
        }
    }
    dx
}

/// Global average over the two spatial axes, `[B, C, H, W] -> [B, C]`.
pub fn mean_spatial<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4("mean_spatial", input.shape())?;
    let n: T = cast((h * w) as f64);
    let out = input
        .data()
        .chunks_exact(h * w)
        .map(|p| p.iter().copied().sum::<T>() / n)
        .collect();
    Tensor::new([b, c], out)
}

pub(crate) fn mean_spatial_backward<T: Scalar>(shape: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let hw = shape[2] * shape[3];
    let n: T = cast(hw as f64);
    let data = grad
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / n, hw))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("same element count")
}

/// `[B, C, S, 1] -> [B, S, C]`.
pub fn channels_to_sequence<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, s, w) = dims4("channels_to_sequence", input.shape())?;
    if w != 1 {
        return Err(TensorError::shape(
            "channels_to_sequence",
            format!("expected a singleton frequency axis, got {w}"),
        ));
    }
    let mut out = vec![T::zero(); input.len()];
    for n in 0..b {
        let src = input.outer(n);
        let dst = &mut out[n * s * c..(n + 1) * s * c];
        for ch in 0..c {
            for t in 0..s {
                dst[t * c + ch] = src[ch * s + t];
            }
        }
    }
    Tensor::new([b, s, c], out)
}

pub(crate) fn channels_to_sequence_backward<T: Scalar>(shape: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let (b, c, s) = (shape[0], shape[1], shape[2]);
    let mut dx = vec![T::zero(); grad.len()];
    for n in 0..b {
        let g = grad.outer(n);
        let dst = &mut dx[n * s * c..(n + 1) * s * c];
        for ch in 0..c {
            for t in 0..s {
                dst[ch * s + t] = g[t * c + ch];
            }
        }
    }
    Tensor::new(shape.to_vec(), dx).expect("same element count")
}

/// `[B, T, C] -> [B, C]`. Ties resolve to the lowest time index, which is
/// also where the gradient is routed.
pub fn max_over_time<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    expect_rank("max_over_time", input.shape(), 3)?;
    let &[b, t, c] = input.shape() else { unreachable!() };
    let mut out = Vec::with_capacity(b * c);
    let mut argmax = Vec::with_capacity(b * c);
    for n in 0..b {
        let x = input.outer(n);
        for ch in 0..c {
            let mut best = 0;
            for step in 1..t {
                if x[step * c + ch] > x[best * c + ch] {
                    best = step;
                }
            }
            out.push(x[best * c + ch]);
            argmax.push(best);
        }
    }
    Ok((Tensor::new([b, c], out)?, argmax))
}

pub(crate) fn max_over_time_backward<T: Scalar>(
    shape: &[usize],
    argmax: &[usize],
    grad: &Tensor<T>,
) -> Tensor<T> {
    let (t, c) = (shape[1], shape[2]);
    let mut dx = Tensor::zeros(shape.to_vec());
    let d = dx.data_mut();
    for (i, (&g, &step)) in grad.data().iter().zip(argmax).enumerate() {
        let (n, ch) = (i / c, i % c);
        d[n * t * c + step * c + ch] = g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_2x2_block_mean() {
        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avg_pool2(&x).unwrap().data(), &[2.5]);
        let odd = Tensor::<f64>::zeros([1, 1, 3, 2]);
        assert!(avg_pool2(&odd).is_err());
    }

    #[test]
    fn adaptive_bins_on_ramp() {
        let x = Tensor::<f64>::new([1, 1, 32, 1], (0..32).map(|v| v as f64).collect()).unwrap();
        let y = adaptive_avg_pool(&x, 16).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, 2.0 * i as f64 + 0.5);
        }
        let short = Tensor::<f64>::zeros([1, 1, 15, 1]);
        assert!(adaptive_avg_pool(&short, 16).is_err());
    }

    #[test]
    fn adaptive_identity_at_matching_size() {
        let x = Tensor::<f64>::new([1, 2, 16, 1], (0..32).map(|v| (v as f64).sqrt()).collect()).unwrap();
        assert_eq!(adaptive_avg_pool(&x, 16).unwrap().data(), x.data());
    }

    #[test]
    fn max_over_time_prefers_first_tie() {
        let x = Tensor::<f64>::new([1, 3, 2], vec![1.0, 5.0, 4.0, 5.0, 4.0, 0.0]).unwrap();
        let (y, arg) = max_over_time(&x).unwrap();
        assert_eq!(y.data(), &[4.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);
    }

    #[test]
    fn sequence_layout_transposes_channels() {
        let x = Tensor::<f64>::new([1, 2, 3, 1], vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0]).unwrap();
        let y = channels_to_sequence(&x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2]);
        assert_eq!(y.data(), &[0.0, 10.0, 1.0, 11.0, 2.0, 12.0]);
    }
}
