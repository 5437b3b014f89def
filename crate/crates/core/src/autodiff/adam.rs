//! Adam with bias correction.

use alloc::vec::Vec;

use crate::math;

/// Optimizer state: step counter plus first/second moment accumulators
/// shaped like the flat parameter vector.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: alloc::vec![0.0; n_params],
            v: alloc::vec![0.0; n_params],
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) {
    assert_eq!(params.len(), grads.len(), "gradient shape mismatch");
    assert_eq!(params.len(), state.m.len(), "adam state shape mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - math::pow(state.beta1, t as f64);
    let bc2 = 1.0 - math::pow(state.beta2, t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (math::sqrt(v_hat) + state.eps);
    }
}
