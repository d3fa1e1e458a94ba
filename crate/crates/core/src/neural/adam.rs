//! ADAM with inverse-time learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One parameter tensor handed to the optimiser, flattened.
pub struct ParamBlock<'a> {
    pub label: String,
    pub params: &'a mut [f64],
    pub grads: &'a [f64],
}

/// First/second moments for an ordered list of parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    /// Completed steps.
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(block_sizes: &[usize]) -> Self {
        Self::with_config(block_sizes, AdamConfig::default())
    }

    pub fn with_config(block_sizes: &[usize], config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }

    /// `lr / (1 + decay * t)` for the step about to be taken.
    pub fn effective_lr(&self) -> f64 {
        self.config.lr / (1.0 + self.config.decay * self.t as f64)
    }

    pub fn step(&mut self, blocks: &mut [ParamBlock<'_>]) -> Result<()> {
        if blocks.len() != self.m.len() {
            return Err(Error::LengthMismatch(format!(
                "optimiser tracks {} blocks, got {}",
                self.m.len(),
                blocks.len()
            )));
        }
        for (b, m) in blocks.iter().zip(&self.m) {
            if b.params.len() != m.len() || b.grads.len() != m.len() {
                return Err(Error::LengthMismatch(format!(
                    "block `{}` has {} params / {} grads, optimiser expects {}",
                    b.label,
                    b.params.len(),
                    b.grads.len(),
                    m.len()
                )));
            }
            if b.grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", b.label)));
            }
        }
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let lr = self.effective_lr();
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((b, m), v) in blocks.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in b
                .params
                .iter_mut()
                .zip(b.grads)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if b.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of {}", b.label)));
            }
        }
        Ok(())
    }
}

/// Single-tensor convenience wrapper around [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    state.step(&mut [ParamBlock {
        label: "params".into(),
        params,
        grads,
    }])
}
