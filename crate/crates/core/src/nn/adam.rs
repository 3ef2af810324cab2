use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

use super::params::ModelParameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(5.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self { config, m: vec![T::zero(); num_params], v: vec![T::zero(); num_params], step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Euclidean norm of the gradient, accumulated in `f64`.
pub fn global_norm<T: Scalar>(grads: &[T]) -> f64 {
    grads.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt()
}

/// Bias-corrected Adam update with optional global-norm clipping. Returns the
/// gradient norm before clipping.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParameters<T>,
    grads: &[T],
    state: &mut AdamState<T>,
) -> Result<f64> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return invalid(format!(
            "gradient ({}) / optimizer state ({}) do not match {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        ));
    }
    if let Some(idx) = grads.iter().position(|g| !g.is_finite()) {
        let block = params.block_of(idx).expect("index within layout");
        return Err(Error::NonFiniteGradient {
            block: block.name.clone(),
            index: idx - block.offset,
        });
    }
    let cfg = state.config;
    let norm = global_norm(grads);
    let clip = match cfg.clip_norm {
        Some(c) if norm > c => T::of(c / norm),
        _ => T::one(),
    };
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let bc1 = T::of(1.0 - cfg.beta1.powi(t));
    let bc2 = T::of(1.0 - cfg.beta2.powi(t));
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.eps);
    let one = T::one();
    let data = params.data_mut();
    for i in 0..data.len() {
        let g = grads[i] * clip;
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(norm)
}
