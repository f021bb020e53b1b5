use crate::gemm::gemm;
use crate::{Result, Scalar, Tensor, TensorError};

/// Affine map over the last axis: `[..., din] x [din, dout] + [dout]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let din = *x.shape().last().expect("rank >= 1");
    if w.rank() != 2 || w.shape()[0] != din {
        return Err(TensorError::shape(
            "linear",
            format!("input {:?} incompatible with weight {:?}", x.shape(), w.shape()),
        ));
    }
    let dout = w.shape()[1];
    if let Some(b) = b {
        if b.shape() != [dout] {
            return Err(TensorError::shape(
                "linear",
                format!("bias {:?} does not match output width {dout}", b.shape()),
            ));
        }
    }
    let rows = x.len() / din;
    let mut out = vec![T::zero(); rows * dout];
    if let Some(b) = b {
        out.chunks_exact_mut(dout).for_each(|r| r.copy_from_slice(b.data()));
    }
    gemm(rows, din, dout, x.data(), false, w.data(), false, &mut out, true);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = dout;
    Tensor::new(shape, out)
}

pub(crate) struct LinearGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub(crate) fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &Tensor<T>,
    need_input: bool,
) -> LinearGrads<T> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let rows = x.len() / din;
    let mut dw = vec![T::zero(); din * dout];
    gemm(din, rows, dout, x.data(), true, grad.data(), false, &mut dw, false);
    let mut db = vec![T::zero(); dout];
    for r in grad.data().chunks_exact(dout) {
        db.iter_mut().zip(r).for_each(|(d, &g)| *d += g);
    }
    let input = need_input.then(|| {
        let mut dx = vec![T::zero(); rows * din];
        gemm(rows, dout, din, grad.data(), false, w.data(), true, &mut dx, false);
        Tensor::new(x.shape().to_vec(), dx).expect("same shape")
    });
    LinearGrads {
        input,
        weight: Tensor::new([din, dout], dw).expect("same shape"),
        bias: Tensor::new([dout], db).expect("same shape"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_and_zero_input() {
        let x = Tensor::<f64>::new([2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        let mut eye = Tensor::zeros([3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(linear(&x, &eye, None).unwrap(), x);
        let b = Tensor::new([3], vec![4.0, 5.0, 6.0]).unwrap();
        let y = linear(&Tensor::zeros([2, 3]), &eye, Some(&b)).unwrap();
        assert_eq!(y.data(), &[4.0, 5.0, 6.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let x = Tensor::<f64>::zeros([2, 3]);
        assert!(linear(&x, &Tensor::zeros([4, 2]), None).is_err());
    }
}
