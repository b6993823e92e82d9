//! Adam / AdamW with bias correction and an optional warmup + cosine
//! schedule. Single-threaded, allocation-stable, deterministic.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Adam,
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub algorithm: Algorithm,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub warmup_steps: usize,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
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
fn default_schedule() -> Schedule {
    Schedule::Constant
}

impl OptimConfig {
    /// Plain Adam at the given learning rate; the synthetic-task setting.
    pub fn adam(lr: f64) -> Self {
        OptimConfig {
            algorithm: Algorithm::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_steps: 0,
            schedule: Schedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        Ok(())
    }
}

/// lr(step) for a 1-based step out of `total_steps`. Linear ramp to the peak
/// at `warmup_steps`, then constant or cosine decay reaching ~0 at the end.
pub fn lr_at(cfg: &OptimConfig, step: usize, total_steps: usize) -> f64 {
    let warmup = cfg.warmup_steps;
    if warmup > 0 && step <= warmup {
        return cfg.lr * step as f64 / warmup as f64;
    }
    match cfg.schedule {
        Schedule::Constant => cfg.lr,
        Schedule::Cosine => {
            let span = total_steps.saturating_sub(warmup).max(1) as f64;
            let progress = (step - warmup) as f64 / span;
            cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
        }
    }
}

/// First/second moment buffers, one pair per parameter in a fixed order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[(String, &Tensor)]) -> Self {
        AdamState {
            m: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
        }
    }
}

/// One optimizer step over all parameters. Gradients are read from each
/// tensor's grad buffer (missing grad = zero). `step` is 1-based; bias
/// correction uses it directly. AdamW applies decoupled decay
/// theta *= (1 - lr * wd) before the Adam update.
pub fn adam_step(
    params: &mut [(String, &mut Tensor)],
    state: &mut AdamState,
    cfg: &OptimConfig,
    step: usize,
    total_steps: usize,
) -> Result<()> {
    assert!(step >= 1, "adam_step is 1-based");
    let lr = lr_at(cfg, step, total_steps);
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for (idx, (name, tensor)) in params.iter_mut().enumerate() {
        if let Some(g) = tensor.grad() {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteGrad {
                    name: name.clone(),
                    step,
                });
            }
        }
        let n = tensor.numel();
        let grad_holder;
        let g: &[f64] = match tensor.grad() {
            Some(g) => {
                grad_holder = g.to_vec();
                &grad_holder
            }
            None => {
                grad_holder = vec![0.0; n];
                &grad_holder
            }
        };
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let data = tensor.data_mut();
        if cfg.algorithm == Algorithm::AdamW && cfg.weight_decay != 0.0 {
            let shrink = 1.0 - lr * cfg.weight_decay;
            for x in data.iter_mut() {
                *x *= shrink;
            }
        }
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
