//! Adam with optional single-precision state.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Round parameters and moments to `f32` after every step so the state serializes exactly.
    pub single_precision: bool,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self { config, step: 0, m: vec![0.0; len], v: vec![0.0; len], single_precision: false }
    }

    pub fn single_precision(mut self) -> Self {
        self.single_precision = true;
        self
    }

    /// One update with learning rate `lr` (the scheduled value).
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        let AdamConfig { beta1, beta2, epsilon, .. } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let round = |x: f64| if self.single_precision { x as f32 as f64 } else { x };
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = round(beta1 * self.m[i] + (1.0 - beta1) * g);
            self.v[i] = round(beta2 * self.v[i] + (1.0 - beta2) * g * g);
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] = round(params[i] - lr * mhat / (vhat.sqrt() + epsilon));
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.config.learning_rate;
        self.update(params, grad, lr);
    }
}
