//! Adam optimizer over a named parameter set.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::matrix::Matrix;
use crate::params::ModelParams;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient for parameter `{name}` (element {index}); step aborted")]
    NonFiniteGradient { name: String, index: usize },
    #[error("gradient for `{name}` has shape {got:?}, parameter is {expected:?}")]
    ShapeMismatch { name: String, got: (usize, usize), expected: (usize, usize) },
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates, lazily allocated per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    step: u64,
    m: BTreeMap<String, Matrix>,
    v: BTreeMap<String, Matrix>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update. Parameters without a gradient entry are left untouched
/// (their moments do not decay either; they were not part of this step).
/// Any non-finite gradient aborts the whole step before touching anything.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Matrix>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), OptimError> {
    for (name, g) in grads {
        let p = params.get(name);
        if g.shape() != p.shape() {
            return Err(OptimError::ShapeMismatch {
                name: name.clone(),
                got: g.shape(),
                expected: p.shape(),
            });
        }
        if let Some(index) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(OptimError::NonFiniteGradient { name: name.clone(), index });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    for (name, g) in grads {
        let (rows, cols) = g.shape();
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(rows, cols));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(rows, cols));
        let p = params.get_mut(name);
        for i in 0..g.len() {
            let gi = g.data()[i];
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            p.data_mut()[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(v: f64) -> ModelParams {
        let mut p = ModelParams::new();
        p.insert("w", Matrix::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_fresh_state_leaves_params_unchanged() {
        let mut params = single_param(0.7);
        let mut state = AdamState::new();
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Matrix::scalar(0.0));
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap();
        }
        assert_eq!(params.get("w")[(0, 0)], 0.7);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn single_step_matches_hand_evaluated_recurrence() {
        // g=1, fresh state: m̂ = 1, v̂ = 1, so the step is lr exactly up to eps.
        let mut params = single_param(2.0);
        let mut state = AdamState::new();
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Matrix::scalar(1.0));
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();

        // Hand evaluation: m = 0.1, v = 0.001, m̂ = 0.1/0.1 = 1,
        // v̂ = 0.001/0.001 = 1, update = 0.1 * 1/(1 + 1e-8).
        let expected = 2.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((params.get("w")[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut params = single_param(1.0);
            let mut state = AdamState::new();
            let cfg = AdamConfig::default();
            for step in 0..50 {
                let mut grads = BTreeMap::new();
                grads.insert("w".to_string(), Matrix::scalar((step as f64 * 0.37).sin()));
                adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
            }
            params.get("w")[(0, 0)].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut params = single_param(1.0);
        let mut state = AdamState::new();
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Matrix::scalar(f64::NAN));
        let err = adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap_err();
        assert_eq!(
            err,
            OptimError::NonFiniteGradient { name: "w".into(), index: 0 }
        );
        assert_eq!(params.get("w")[(0, 0)], 1.0);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn gradient_shape_must_match() {
        let mut params = single_param(1.0);
        let mut state = AdamState::new();
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Matrix::zeros(2, 1));
        let err = adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, OptimError::ShapeMismatch { .. }));
    }
}
