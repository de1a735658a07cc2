//! Adam with bias correction, operating on flat parameter slices.

use super::unet::UNetParams;
use crate::error::{Error, Result};
use crate::scalar::{from_f64, Scalar};

/// Hyperparameters; the defaults are lr 1e-4, beta1 0.9, beta2 0.999,
/// eps 1e-8.
#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First/second moment buffers plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            step: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }
}

/// One Adam update over a flat parameter slice. Deterministic; zero
/// gradients leave the parameters untouched exactly.
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    h: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::SizeMismatch {
            expected: params.len(),
            found: grads.len().min(state.m.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = from_f64::<T>(h.beta1);
    let b2 = from_f64::<T>(h.beta2);
    let one = T::one();
    let bc1 = one - from_f64::<T>(h.beta1.powi(t));
    let bc2 = one - from_f64::<T>(h.beta2.powi(t));
    let lr = from_f64::<T>(h.lr);
    let eps = from_f64::<T>(h.eps);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every U-Net parameter, in declaration order against one shared
/// state.
pub fn adam_step_unet<T: Scalar>(
    params: &mut UNetParams<T>,
    grads: &UNetParams<T>,
    state: &mut AdamState<T>,
    h: &AdamHyper,
) -> Result<()> {
    let mut flat = params.flatten();
    let gflat = grads.flatten();
    adam_step(&mut flat, &gflat, state, h)?;
    params.unflatten(&flat)
}
