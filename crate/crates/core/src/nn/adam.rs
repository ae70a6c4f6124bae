//! Adam with bias correction and a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Multiplier applied every `decay_interval` steps.
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_interval")]
    pub decay_interval: usize,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_decay() -> f64 {
    0.9
}
fn default_interval() -> usize {
    500
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            decay: default_decay(),
            decay_interval: default_interval(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Completed steps.
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    /// Learning rate of the next step: `lr·decay^⌊step/interval⌋`.
    pub fn current_lr(&self) -> f64 {
        let interval = self.config.decay_interval.max(1) as u64;
        self.config.lr * self.config.decay.powi((self.step / interval) as i32)
    }

    /// Updates parameters (visited as consecutive slices) in place from the
    /// concatenated gradient.
    pub fn step(&mut self, params: &mut [&mut [f64]], grad: &[f64]) -> Result<()> {
        let total: usize = params.iter().map(|p| p.len()).sum();
        if total != grad.len() || total != self.m.len() {
            return Err(Error::Dimension(format!(
                "Adam holds {} moments; got {total} parameters and {} gradients",
                self.m.len(),
                grad.len()
            )));
        }
        let next = self.step + 1;
        if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient entry {pos} at step {next}"
            )));
        }
        let c = self.config;
        let lr = self.current_lr();
        let bc1 = 1.0 - c.beta1.powi(next as i32);
        let bc2 = 1.0 - c.beta2.powi(next as i32);
        let mut offset = 0;
        for p in params.iter_mut() {
            for (idx, theta) in p.iter_mut().enumerate() {
                let e = offset + idx;
                let g = grad[e];
                self.m[e] = c.beta1 * self.m[e] + (1.0 - c.beta1) * g;
                self.v[e] = c.beta2 * self.v[e] + (1.0 - c.beta2) * g * g;
                let m_hat = self.m[e] / bc1;
                let v_hat = self.v[e] / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
            offset += p.len();
        }
        self.step = next;
        Ok(())
    }
}
