//! Central finite-difference gradient checks (64-bit).
//!
//! Only forward evaluations are used to form the numeric estimate, so the
//! check is independent of every backward rule it exercises.
//!
//! The estimate is the four-point central difference, whose truncation error
//! is O(eps^4). It is only a gradient estimate where the function is smooth
//! on `[x - 2 eps, x + 2 eps]`. When a perturbation flips a ReLU sign or a
//! max-over-time winner, the step is shrunk tenfold (down to [`MIN_EPS`])
//! until both sides keep the unperturbed branch pattern.

use crate::{BranchPattern, ParamStore, Result, Tape, Tensor, Var};

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Which tensor / element produced `max_rel_error`.
    pub worst: Option<Worst>,
    pub checked: usize,
    /// Elements whose step had to be shrunk to stay on one branch pattern.
    pub refined: usize,
    /// Elements still crossing a branch at [`MIN_EPS`]; compared anyway.
    pub unresolved: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Worst {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Denominator floor: gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Smallest step tried when refining a step that crosses a branch.
pub const MIN_EPS: f64 = 1e-7;

impl GradCheck {
    fn new() -> Self {
        GradCheck {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
            refined: 0,
            unresolved: 0,
        }
    }

    fn record(&mut self, tensor: &str, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = Some(Worst {
                tensor: tensor.to_string(),
                index,
                analytic,
                numeric,
            });
        }
    }

    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        self.refined += other.refined;
        self.unresolved += other.unresolved;
        if other.max_rel_error >= self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval_scalar(tape: &Tape<f64>, loss: Var) -> f64 {
    tape.value(loss).item()
}

/// Fourth-order central difference of `at` around `orig`,
/// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, shrinking `h` while any
/// of the four points leaves the `base` branch pattern. Returns the estimate,
/// whether `h` was shrunk, and whether it still crosses a branch.
fn central_difference<F>(orig: f64, eps: f64, base: &BranchPattern, mut at: F) -> Result<(f64, bool, bool)>
where
    F: FnMut(f64) -> Result<(f64, BranchPattern)>,
{
    let mut step = eps;
    loop {
        let mut values = [0.0; 4];
        let mut smooth = true;
        for (v, k) in values.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
            let (loss, pattern) = at(orig + k * step)?;
            *v = loss;
            smooth &= pattern == *base;
        }
        if smooth || step / 10.0 < MIN_EPS {
            let [p2, p1, m1, m2] = values;
            let estimate = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * step);
            return Ok((estimate, step < eps, !smooth));
        }
        step /= 10.0;
    }
}

/// Checks d loss / d input for every element of every input tensor.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let base = tape.branch_pattern();
    let mut report = GradCheck::new();
    let mut work = inputs.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[ti].shape().to_vec()));
        for idx in 0..inputs[ti].len() {
            let orig = work[ti].data()[idx];
            let at = |x: f64| -> Result<(f64, BranchPattern)> {
                work[ti].data_mut()[idx] = x;
                let mut tape = Tape::new();
                let vars: Vec<Var> = work.iter().map(|t| tape.leaf(t.clone(), true)).collect();
                let loss = f(&mut tape, &vars)?;
                Ok((eval_scalar(&tape, loss), tape.branch_pattern()))
            };
            let (numeric, refined, unresolved) = central_difference(orig, eps, &base, at)?;
            work[ti].data_mut()[idx] = orig;
            report.record(&format!("input{ti}"), idx, analytic.data()[idx], numeric);
            report.refined += refined as usize;
            report.unresolved += unresolved as usize;
        }
    }
    Ok(report)
}

/// Checks d loss / d parameter for every scalar in `store`.
///
/// `f` must be a pure function of the store values (any running statistics
/// it touches should be local to the call).
pub fn check_params<F>(store: &mut ParamStore<f64>, eps: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward_into(loss, store)?;
    let base = tape.branch_pattern();
    let mut report = GradCheck::new();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let analytic = store.get(id).grad.clone();
        let name = store.get(id).name.clone();
        for idx in 0..analytic.len() {
            let orig = store.get(id).value.data()[idx];
            let at = |x: f64| -> Result<(f64, BranchPattern)> {
                store.get_mut(id).value.data_mut()[idx] = x;
                let mut tape = Tape::new();
                let loss = f(&mut tape, store)?;
                Ok((eval_scalar(&tape, loss), tape.branch_pattern()))
            };
            let (numeric, refined, unresolved) = central_difference(orig, eps, &base, at)?;
            store.get_mut(id).value.data_mut()[idx] = orig;
            report.record(&name, idx, analytic.data()[idx], numeric);
            report.refined += refined as usize;
            report.unresolved += unresolved as usize;
        }
    }
    store.zero_grad();
    Ok(report)
}
