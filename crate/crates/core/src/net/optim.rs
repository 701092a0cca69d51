use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate at every epoch boundary.
    pub decay_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            decay_rate: 0.995,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub learning_rate: f64,
    pub step_count: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<_> = store
            .tensors()
            .iter()
            .map(|t| Array2::zeros(t.values.dim()))
            .collect();
        Self {
            learning_rate: config.learning_rate,
            config,
            step_count: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// Parameters are left untouched when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for t in store.tensors() {
            if t.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(t.name.clone()));
            }
        }
        self.step_count += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step_count as i32);
        let lr = self.learning_rate;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = store.grad(id).clone();
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            m.zip_mut_with(&g, |m, &g| *m = c.beta1 * *m + (1.0 - c.beta1) * g);
            v.zip_mut_with(&g, |v, &g| *v = c.beta2 * *v + (1.0 - c.beta2) * g * g);
            let values = store.values_mut(id);
            ndarray::Zip::from(values).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + c.epsilon);
            });
        }
        store.zero_grad();
        Ok(())
    }

    pub fn end_epoch(&mut self) {
        self.learning_rate *= self.config.decay_rate;
    }
}
