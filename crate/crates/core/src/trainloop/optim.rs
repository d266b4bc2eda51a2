//! Adaptive-moment optimizer with decoupled weight decay.
//!
//! For every trainable tensor, with gradient `g` at step `t`:
//!
//! ```text
//! m = b1 m + (1 - b1) g
//! v = b2 v + (1 - b2) g^2
//! p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps) + lr * wd * p
//! ```
//!
//! The decay term uses the pre-update parameter and never enters the moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-4,
            batch_size: 4,
            max_epochs: 30,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }
}

/// Moment buffers, one per tensor in `ParamSet` order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(params: &impl ParamSet) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        AdamWState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One update of every trainable tensor. Frozen tensors are not touched.
pub fn optimizer_step<P: ParamSet>(
    params: &mut P,
    grads: &P,
    state: &mut AdamWState,
    config: &OptimConfig,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    for g in &grad_tensors {
        if g.trainable {
            if let Some(i) = g.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {} at index {i}", g.name)));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for (k, (p, g)) in params.tensors_mut().into_iter().zip(grad_tensors.iter()).enumerate() {
        if p.name != g.name || p.data.len() != g.data.len() {
            return Err(Error::Shape(format!("gradient {} does not match parameter {}", g.name, p.name)));
        }
        if !p.trainable {
            continue;
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            let old = p.data[i];
            p.data[i] = old - config.lr * mhat / (vhat.sqrt() + config.eps) - config.lr * config.weight_decay * old;
        }
    }
    Ok(())
}
