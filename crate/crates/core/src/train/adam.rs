//! Adam with bias correction, keyed by parameter name; frozen parameters
//! are never touched even when a gradient is supplied.

use super::TrainError;
use crate::autodiff::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: u64,
    first_moment: BTreeMap<String, Tensor>,
    second_moment: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }
}

/// Apply one Adam update to every trainable parameter with a gradient.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
) -> Result<(), TrainError> {
    state.step += 1;
    let t = state.step as i32;
    let AdamConfig { lr, beta1, beta2, eps } = state.cfg;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    for (name, grad) in grads {
        let Some(param) = store.param_mut(name) else {
            return Err(TrainError::Config(format!("gradient for unknown parameter {name}")));
        };
        if !param.trainable {
            continue;
        }
        if param.value.shape() != grad.shape() {
            return Err(TrainError::Config(format!(
                "parameter {name}: value shape {:?} vs gradient shape {:?}",
                param.value.shape(),
                grad.shape()
            )));
        }
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        let values = param.value.data_mut();
        for i in 0..values.len() {
            let g = grad.data()[i];
            let mi = beta1 * m.data()[i] + (1.0 - beta1) * g;
            let vi = beta2 * v.data()[i] + (1.0 - beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
