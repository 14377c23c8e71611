//! Adam with bias correction and a stepped learning-rate decay schedule.
//!
//! The trainer keeps one independent state per parameter group (embedding
//! head, proxies), so moment estimates never mix across groups even though
//! both use the same hyper-parameters.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-group optimizer state: first/second moment estimates and step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: Matrix,
    pub second_moment: Matrix,
    /// Completed steps; bias correction uses `step + 1` within a step.
    pub step: u64,
    /// Group base learning rate, recorded for checkpointing.
    pub base_lr: f64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, base_lr: f64) -> Self {
        Self {
            first_moment: Matrix::zeros(rows, cols),
            second_moment: Matrix::zeros(rows, cols),
            step: 0,
            base_lr,
        }
    }
}

/// One in-place Adam update.
///
/// Moments are updated with the usual exponential averages, bias-corrected by
/// `1 − βᵗ`, and the parameter moves by `lr · m̂ / (√v̂ + ε)` — the epsilon is
/// added after the square root of the corrected second moment.
///
/// # Errors
/// Mismatched shapes, a non-positive learning rate, or any non-finite
/// gradient entry (reported as a numeric fault).
pub fn adam_step(
    params: &mut Matrix,
    grads: &Matrix,
    state: &mut AdamState,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    if params.rows() != grads.rows() || params.cols() != grads.cols() {
        return Err(Error::Shape(format!(
            "parameters are {}x{} but gradients are {}x{}",
            params.rows(),
            params.cols(),
            grads.rows(),
            grads.cols()
        )));
    }
    if params.rows() != state.first_moment.rows() || params.cols() != state.first_moment.cols() {
        return Err(Error::Shape(format!(
            "parameters are {}x{} but optimizer state is {}x{}",
            params.rows(),
            params.cols(),
            state.first_moment.rows(),
            state.first_moment.cols()
        )));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Parameter(format!(
            "learning rate must be positive and finite, got {lr}"
        )));
    }
    if grads.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "non-finite gradient entry in optimizer step".into(),
        ));
    }

    let t = state.step + 1;
    let bias1 = 1.0 - hp.beta1.powi(t as i32);
    let bias2 = 1.0 - hp.beta2.powi(t as i32);
    let m_data = state.first_moment.data_mut();
    let v_data = state.second_moment.data_mut();
    let p_data = params.data_mut();
    let g_data = grads.data();
    for idx in 0..p_data.len() {
        let g = g_data[idx];
        m_data[idx] = hp.beta1 * m_data[idx] + (1.0 - hp.beta1) * g;
        v_data[idx] = hp.beta2 * v_data[idx] + (1.0 - hp.beta2) * g * g;
        let m_hat = m_data[idx] / bias1;
        let v_hat = v_data[idx] / bias2;
        p_data[idx] -= lr * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
    state.step = t;
    Ok(())
}

/// Stepped decay: `base · factor^⌊epoch / every⌋`.
pub fn lr_at_epoch(base: f64, epoch: u64, every: u64, factor: f64) -> f64 {
    base * factor.powi((epoch / every) as i32)
}
