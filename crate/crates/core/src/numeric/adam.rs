use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_stab: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_stab: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment accumulators for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step_count: u64,
    first_moment: Matrix,
    second_moment: Matrix,
}

impl AdamState {
    pub fn new(config: AdamConfig, rows: usize, cols: usize) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::invalid("Adam learning rate must be positive"));
        }
        Ok(Self {
            config,
            step_count: 0,
            first_moment: Matrix::zeros(rows, cols),
            second_moment: Matrix::zeros(rows, cols),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies decoupled weight decay, then one bias-corrected Adam update.
    pub fn step(&mut self, param: &mut Matrix, grad: &Matrix) -> Result<()> {
        if param.shape() != grad.shape() || param.shape() != self.first_moment.shape() {
            return Err(Error::invalid(format!(
                "Adam shape mismatch: param {:?}, grad {:?}, state {:?}",
                param.shape(),
                grad.shape(),
                self.first_moment.shape()
            )));
        }
        let c = self.config;
        self.step_count += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step_count as i32);
        let decay = 1.0 - c.lr * c.weight_decay;
        let m = self.first_moment.as_mut_slice();
        let v = self.second_moment.as_mut_slice();
        for (((p, &g), m), v) in param
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *p *= decay;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= c.lr * m_hat / (v_hat.sqrt() + c.eps_stab);
        }
        Ok(())
    }
}
