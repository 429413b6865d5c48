//! Finite-difference gradient verification.
//!
//! The oracle here only ever calls forward passes, so it stays independent
//! of the backward implementations it checks. Run in `f64` with the default
//! step `h = 1e-4`.

use super::{Scalar, Tensor};

/// Central finite-difference gradient of a scalar-valued function at `x`.
pub fn numerical_grad<F>(f: &F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Worst-case mixed absolute/relative error between two gradient vectors:
/// `max_i |a_i − b_i| / max(1, |a_i|, |b_i|)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs()))
        .fold(0.0, f64::max)
}

/// Check the analytic gradient of `loss_fn` w.r.t. a single input against
/// central differences. `loss_fn` maps a parameter tensor to a scalar loss;
/// it is re-invoked for every probe, so it must be a pure function of the
/// parameter values.
///
/// Returns the worst relative error over all coordinates.
pub fn check_input_grad<F>(shape: &[usize], x: &[f64], loss_fn: F, h: f64) -> f64
where
    F: Fn(&Tensor<f64>) -> Tensor<f64>,
{
    let param = Tensor::parameter(shape, x.to_vec()).unwrap();
    let loss = loss_fn(&param);
    loss.backward();
    let analytic = param.grad().expect("loss did not reach the parameter");

    let shape = shape.to_vec();
    let eval = |vals: &[f64]| -> f64 {
        let p = Tensor::from_vec(&shape, vals.to_vec()).unwrap();
        loss_fn(&p).item()
    };
    let numeric = numerical_grad(&eval, x, h);
    max_rel_err(&analytic, &numeric)
}

/// Uniform values in `[-1, 1]` from a simple LCG; deterministic fixtures
/// for gradient checks without dragging an RNG dependency into the oracle.
pub fn lcg_values(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

impl<T: Scalar> Tensor<T> {
    /// Copy of this tensor's data converted to `f64`.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data().iter().map(|v| v.to_f64().unwrap()).collect()
    }
}
