use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, net: &Mlp) -> Self {
        let n = net.param_count();
        Self {
            config,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// One descent step along `grads`.
    pub fn update(&mut self, net: &mut Mlp, grads: &Gradients) {
        assert_eq!(net.param_count(), self.m.len(), "optimizer built for another network");
        let c = self.config;
        let scale = match c.clip_norm {
            Some(max) => {
                let n = grads.norm();
                if n > max {
                    max / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut k = 0;
        net.apply_gradients(grads, |p, g| {
            let g = g * scale;
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *p -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            k += 1;
        });
    }
}
