use super::ParamStore;
use crate::error::{Error, Result};

/// Bias-corrected Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Defaults: beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(params: &ParamStore, learning_rate: f64) -> Self {
        Self::with_betas(params, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(
        params: &ParamStore,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.second[index]
    }
}

/// One Adam update from the gradients currently held in `params`.
///
/// Non-finite gradients abort the step before anything is modified.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if state.first.len() != params.len()
        || params
            .iter()
            .zip(&state.first)
            .any(|(p, m)| p.len() != m.len())
    {
        return Err(Error::ShapeMismatch(
            "optimizer state does not match parameter layout".into(),
        ));
    }
    params.grads_finite()?;

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    for ((p, m), v) in params
        .iter_mut()
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for j in 0..p.value.len() {
            let g = p.grad[j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            p.value[j] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
