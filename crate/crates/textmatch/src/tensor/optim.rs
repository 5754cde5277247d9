use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Result, TmError};

/// SGD with classical momentum: v ← momentum·v + g, p ← p − lr·v.
///
/// One velocity buffer per named parameter, created lazily at zero and kept
/// shape-locked to the parameter thereafter.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl SgdState {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(TmError::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(TmError::Config(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(SgdState {
            learning_rate,
            momentum,
            velocity: BTreeMap::new(),
        })
    }

    /// Applies one update to `param` in place.
    pub fn step(&mut self, name: &str, param: &mut Tensor, grad: &[f64]) -> Result<()> {
        if grad.len() != param.numel() {
            return Err(TmError::Contract(format!(
                "sgd_step {name}: gradient length {} vs parameter {}",
                grad.len(),
                param.numel()
            )));
        }
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; grad.len()]);
        if v.len() != grad.len() {
            return Err(TmError::Contract(format!(
                "sgd_step {name}: velocity length {} vs gradient {}",
                v.len(),
                grad.len()
            )));
        }
        let lr = self.learning_rate;
        let mu = self.momentum;
        for ((p, vel), &g) in param.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
            *vel = mu * *vel + g;
            *p -= lr * *vel;
        }
        Ok(())
    }
}
