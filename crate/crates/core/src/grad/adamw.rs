use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Multiply every learning rate by `factor` once `step` updates have run.
    pub decay: Option<(u64, f64)>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decay: Some((100_000, 0.5)),
        }
    }
}

/// Bias-corrected Adam with decoupled weight decay; learning rates come
/// from the parameter groups.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, n: usize) -> Self {
        AdamW {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn lr_scale(&self) -> f64 {
        match self.config.decay {
            Some((at, f)) if self.step >= at => f,
            _ => 1.0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[f64]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer shape mismatch: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::numeric("adamw_step", format!("gradient {i} is {}", grads[i])));
        }
        let scale = self.lr_scale();
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for g in &params.groups {
            let lr = g.lr * scale;
            for i in g.offset..g.offset + g.len {
                let gi = grads[i];
                self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * gi;
                self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = self.m[i] / bc1;
                let vhat = self.v[i] / bc2;
                let p = &mut params.values[i];
                *p -= lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *p);
            }
        }
        Ok(())
    }
}
