//! Adam with classical (pre-moment) weight decay.
//!
//! Decay is added to the raw gradient *before* the moment updates, i.e. plain
//! L2 regularization, not the decoupled variant.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> AdamState {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update over a flat parameter block, in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Dimension(format!(
            "adam on {} params with {} grads and state of {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if !(lr.is_finite() && lr >= 0.0) || !(weight_decay.is_finite() && weight_decay >= 0.0) {
        return Err(Error::Invalid(format!("lr {lr} / weight_decay {weight_decay}")));
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i] + weight_decay * params[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_leaves_params_unchanged() {
        let mut p = vec![0.3, -0.7, 2.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 1e-2, 0.0).unwrap();
        assert_eq!(p, vec![0.3, -0.7, 2.0]);
    }

    // First step has m̂ = g and v̂ = g², so the update is −lr·g/(|g|+ε).
    #[test]
    fn first_step_matches_closed_form() {
        let g = [0.25, -1.5, 3.0];
        let mut p = [1.0, 1.0, 1.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &g, &mut s, 1e-3, 0.0).unwrap();
        for i in 0..3 {
            let expected = 1.0 - 1e-3 * g[i] / (g[i].abs() + EPSILON);
            assert!((p[i] - expected).abs() < 1e-15, "param {i}");
        }
    }

    #[test]
    fn descends_a_quadratic() {
        let mut x = [1.0];
        let mut s = AdamState::new(1);
        for _ in 0..100 {
            let g = [2.0 * x[0]];
            adam_step(&mut x, &g, &mut s, 0.1, 0.0).unwrap();
        }
        assert!(x[0].abs() < 0.5, "x = {}", x[0]);
    }

    #[test]
    fn weight_decay_shrinks_params_without_gradient() {
        let mut p = [2.0];
        let mut s = AdamState::new(1);
        for _ in 0..50 {
            adam_step(&mut p, &[0.0], &mut s, 1e-2, 1e-1).unwrap();
        }
        assert!(p[0] < 2.0 && p[0] > 0.0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = vec![0.5, -0.25];
            let mut s = AdamState::new(2);
            for i in 0..20 {
                let g = vec![(i as f64 * 0.1).sin(), (i as f64 * 0.2).cos()];
                adam_step(&mut p, &g, &mut s, 1e-2, 1e-4).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = [0.0; 2];
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut p, &[0.0; 3], &mut s, 1e-2, 0.0).is_err());
    }
}
