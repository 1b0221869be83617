//! Adam with bias correction.

use crate::error::{DimError, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamState {
    /// Defaults: beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn new(param_count: usize, lr: f32) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update in place. Rejects non-finite gradients so training
/// divergence surfaces instead of silently corrupting the weights.
pub fn adam_step(state: &mut AdamState, params: &mut [f32], grads: &[f32]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(DimError::shape("adam_step", state.m.len(), grads.len()));
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(DimError::NonFiniteGradient("adam_step".into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - f64::from(state.beta1).powf(t);
    let bc2 = 1.0 - f64::from(state.beta2).powf(t);
    let (b1, b2) = (state.beta1, state.beta2);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = f64::from(state.m[i]) / bc1;
        let v_hat = f64::from(state.v[i]) / bc2;
        params[i] -= (f64::from(state.lr) * m_hat / (v_hat.sqrt() + f64::from(state.eps))) as f32;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_noop() {
        let mut st = AdamState::new(3, 1e-3);
        let mut p = vec![1.0f32, -2.0, 0.5];
        adam_step(&mut st, &mut p, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // With g = 1: m_hat = 1, v_hat = 1, so dp = lr / (1 + eps) ~ lr.
        let mut st = AdamState::new(1, 1e-3);
        let mut p = vec![0.0f32];
        adam_step(&mut st, &mut p, &[1.0]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((f64::from(p[0]) - expected).abs() < 1e-9);
    }

    #[test]
    fn quadratic_descent_converges() {
        // f(w) = w^2, grad = 2w, 500 steps from w = 1.
        let mut st = AdamState::new(1, 1e-2);
        let mut w = vec![1.0f32];
        for _ in 0..500 {
            let g = 2.0 * w[0];
            adam_step(&mut st, &mut w, &[g]).unwrap();
        }
        assert!(w[0].abs() < 0.1, "w = {}", w[0]);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut st = AdamState::new(1, 1e-3);
        let mut p = vec![0.0f32];
        assert!(adam_step(&mut st, &mut p, &[f32::NAN]).is_err());
        assert_eq!(st.step, 0);
    }
}
