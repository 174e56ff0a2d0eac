use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(param_shape: &[usize], config: AdamConfig) -> Self {
        Self {
            m: Tensor::zeros(param_shape),
            v: Tensor::zeros(param_shape),
            t: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, lr: f64) -> Result<()> {
    param.check_same_shape(grad)?;
    param.check_same_shape(&state.m)?;
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::config(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub states: Vec<AdamState>,
}

impl Adam {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>, config: AdamConfig) -> Self {
        Self {
            states: shapes
                .into_iter()
                .map(|s| AdamState::new(s, config))
                .collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(Error::dim(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.states.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), s) in params.into_iter().zip(grads).zip(&mut self.states) {
            adam_step(p, g, s, lr)?;
        }
        Ok(())
    }
}
