//! AdamW (Adam with decoupled weight decay) over named parameter groups.
//!
//! Each group keeps its own learning rate and moment buffers; the step
//! counter used for bias correction is shared.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl ParamGroup {
    pub fn new(lr: f64, len: usize) -> Self {
        Self { lr, m: vec![0.0; len], v: vec![0.0; len] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub groups: Vec<ParamGroup>,
    /// Completed steps.
    pub t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, groups: Vec<ParamGroup>) -> Self {
        Self { config, groups, t: 0 }
    }

    /// Applies one update. `params[g]` and `grads[g]` belong to group `g`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.groups.len() || grads.len() != self.groups.len() {
            return Err(Error::Input("one parameter and gradient slice per group".into()));
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((group, p), g) in self.groups.iter_mut().zip(params.iter_mut()).zip(grads) {
            if p.len() != group.m.len() || g.len() != group.m.len() {
                return Err(Error::Input("parameter group changed size".into()));
            }
            for i in 0..p.len() {
                let gi = g[i];
                group.m[i] = c.beta1 * group.m[i] + (1.0 - c.beta1) * gi;
                group.v[i] = c.beta2 * group.v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = group.m[i] / bc1;
                let v_hat = group.v[i] / bc2;
                p[i] -= group.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * p[i]);
            }
        }
        Ok(())
    }
}
