use super::activation::{softmax_row, softmax_row_backward};
use super::expect_rank;
use crate::{cast, Result, Scalar, Tensor, TensorError};

/// For each head `i`: `softmax(Q_i K_i^T / sqrt(d)) V_i`, where `Q_i` is the
/// `i`-th slice of width `d = C / heads` along the last axis. Head outputs are
/// written back into their slices, i.e. concatenated.
///
/// Returns the output `[B, T, C]` and the attention probabilities
/// `[B, heads, T, T]`.
pub fn attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    expect_rank("attention", q.shape(), 3)?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(TensorError::shape(
            "attention",
            format!("q {:?}, k {:?}, v {:?} differ", q.shape(), k.shape(), v.shape()),
        ));
    }
    let &[b, t, c] = q.shape() else { unreachable!() };
    if heads == 0 || c % heads != 0 {
        return Err(TensorError::Config(format!(
            "{c} features are not divisible into {heads} heads"
        )));
    }
    let d = c / heads;
    let scale = T::one() / cast::<T>(d as f64).sqrt();
    let mut out = vec![T::zero(); q.len()];
    let mut probs = vec![T::zero(); b * heads * t * t];
    for n in 0..b {
        let (qs, ks, vs) = (q.outer(n), k.outer(n), v.outer(n));
        for h in 0..heads {
            let off = h * d;
            let p = &mut probs[(n * heads + h) * t * t..][..t * t];
            for i in 0..t {
                let qi = &qs[i * c + off..][..d];
                let row = &mut p[i * t..(i + 1) * t];
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &ks[j * c + off..][..d];
                    *r = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                }
                softmax_row(row);
            }
            let o = &mut out[n * t * c..(n + 1) * t * c];
            for i in 0..t {
                for j in 0..t {
                    let pij = p[i * t + j];
                    let vj = &vs[j * c + off..][..d];
                    for (dst, &vv) in o[i * c + off..][..d].iter_mut().zip(vj) {
                        *dst += pij * vv;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new([b, t, c], out)?,
        Tensor::new([b, heads, t, t], probs)?,
    ))
}

pub(crate) struct AttentionGrads<T> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
}

pub(crate) fn attention_backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    probs: &Tensor<T>,
    grad: &Tensor<T>,
) -> AttentionGrads<T> {
    let &[b, t, c] = q.shape() else { unreachable!() };
    let d = c / heads;
    let scale = T::one() / cast::<T>(d as f64).sqrt();
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dp = vec![T::zero(); t];
    let mut ds = vec![T::zero(); t];
    for n in 0..b {
        let (qs, ks, vs, gs) = (q.outer(n), k.outer(n), v.outer(n), grad.outer(n));
        let base = n * t * c;
        for h in 0..heads {
            let off = h * d;
            let p = &probs.data()[(n * heads + h) * t * t..][..t * t];
            for i in 0..t {
                let gi = &gs[i * c + off..][..d];
                for j in 0..t {
                    let vj = &vs[j * c + off..][..d];
                    dp[j] = gi.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                    // dV_j += P_ij * dO_i
                    let pij = p[i * t + j];
                    for (dst, &g) in dv[base + j * c + off..][..d].iter_mut().zip(gi) {
                        *dst += pij * g;
                    }
                }
                softmax_row_backward(&p[i * t..(i + 1) * t], &dp, &mut ds);
                let qi = &qs[i * c + off..][..d];
                for j in 0..t {
                    let sij = ds[j] * scale;
                    let kj = &ks[j * c + off..][..d];
                    for (dst, &kv) in dq[base + i * c + off..][..d].iter_mut().zip(kj) {
                        *dst += sij * kv;
                    }
                    for (dst, &qv) in dk[base + j * c + off..][..d].iter_mut().zip(qi) {
                        *dst += sij * qv;
                    }
                }
            }
        }
    }
    let shape = q.shape().to_vec();
    AttentionGrads {
        q: Tensor::new(shape.clone(), dq).expect("same shape"),
        k: Tensor::new(shape.clone(), dk).expect("same shape"),
        v: Tensor::new(shape, dv).expect("same shape"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_queries_average_values() {
        let v = Tensor::<f64>::new([1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 8.0, 0.0]).unwrap();
        let z = Tensor::zeros([1, 3, 2]);
        let (out, probs) = attention(&z, &z, &v, 1).unwrap();
        for row in out.data().chunks(2) {
            assert!((row[0] - 4.0).abs() < 1e-12);
            assert!((row[1] - 2.0).abs() < 1e-12);
        }
        assert!(probs.data().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn heads_must_divide_width() {
        let z = Tensor::<f64>::zeros([1, 2, 6]);
        assert!(matches!(attention(&z, &z, &z, 4), Err(TensorError::Config(_))));
    }
}
