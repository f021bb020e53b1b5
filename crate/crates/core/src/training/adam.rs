use setrans_autodiff::{cast, ParamStore, Scalar};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected first and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// `p -= lr * m_hat / (sqrt(v_hat) + eps)` for every parameter, using its accumulated gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let (b1, b2, eps): (T, T, T) = (cast(BETA1), cast(BETA2), cast(EPSILON));
        let c1: T = cast(1.0 - BETA1.powi(self.step as i32));
        let c2: T = cast(1.0 - BETA2.powi(self.step as i32));
        let lr: T = cast(lr);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
