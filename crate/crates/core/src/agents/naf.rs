//! Normalized advantage function agent (STON) for a scalar action.
//!
//! One network with a shared trunk emits three heads per observation:
//! the raw action mean, the state value and the log-diagonal of `L`.
//! With a single action dimension `P = L·Lᵀ = exp(2ℓ)`.

use rand::Rng;

use super::{init_net, td_targets, Batch, UpdateParams, UpdateStats};
use crate::neural::{stack, Activation, Adam, AdamConfig, LayerSpec, Matrix, Mlp, NeuralError};

/// Bound on the log-diagonal entry; keeps `P` finite.
const L_RAW_LIMIT: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NafValues {
    pub mu: f64,
    pub v: f64,
    pub p: f64,
    pub advantage: f64,
    pub q: f64,
}

/// Splits a raw head triple into `μ`, `V`, `P` and evaluates `Q(x, a)`.
pub fn naf_decompose(heads: &[f64], a: f64) -> NafValues {
    let mu = heads[0].tanh();
    let v = heads[1];
    let p = (2.0 * heads[2].clamp(-L_RAW_LIMIT, L_RAW_LIMIT)).exp();
    let diff = a - mu;
    let advantage = -0.5 * p * diff * diff;
    NafValues {
        mu,
        v,
        p,
        advantage,
        q: advantage + v,
    }
}

pub fn naf_specs(obs_dim: usize, hidden: &[usize]) -> Vec<LayerSpec> {
    stack(obs_dim, hidden, 3, Activation::Tanh, Activation::Linear)
}

#[derive(Debug, Clone)]
pub struct NafAgent {
    pub net: Mlp,
    pub target: Mlp,
    opt: Adam,
    pub params: UpdateParams,
}

impl NafAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        opt: AdamConfig,
        params: UpdateParams,
        rng: &mut R,
    ) -> Result<Self, NeuralError> {
        let net = init_net(&naf_specs(obs_dim, hidden), rng)?;
        Ok(Self {
            opt: Adam::new(opt, &net),
            target: net.clone(),
            net,
            params,
        })
    }

    pub fn evaluate(&self, obs: &[f64], a: f64) -> Result<NafValues, NeuralError> {
        Ok(naf_decompose(&self.net.predict_one(obs)?, a))
    }

    /// `μ(x)` plus `noise`, clamped to `[-1, 1]`.
    pub fn act(&self, obs: &[f64], noise: f64) -> Result<f64, NeuralError> {
        let mu = self.net.predict_one(obs)?[0].tanh();
        Ok((mu + noise).clamp(-1.0, 1.0))
    }

    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats, NeuralError> {
        let n = batch.len();
        let inv_n = 1.0 / n as f64;
        let next = self.target.predict(&batch.x_next)?;
        let v_next: Vec<f64> = (0..n).map(|i| next.get(i, 1)).collect();
        let y = td_targets(&batch.r, &batch.done, &v_next, &self.params);

        let (out, cache) = self.net.forward(&batch.x)?;
        let mut grad = Matrix::zeros(n, 3);
        let mut loss = 0.0;
        for i in 0..n {
            let heads = out.row(i);
            let vals = naf_decompose(heads, batch.a.data[i]);
            let d = vals.q - y[i];
            loss += d * d * inv_n;
            let gq = 2.0 * d * inv_n;
            let diff = batch.a.data[i] - vals.mu;
            let g = grad.row_mut(i);
            g[0] = gq * vals.p * diff * (1.0 - vals.mu * vals.mu);
            g[1] = gq;
            g[2] = if heads[2].abs() < L_RAW_LIMIT {
                gq * 2.0 * vals.advantage
            } else {
                0.0
            };
        }
        let (grads, _) = self.net.backward(&cache, &grad)?;
        self.opt.update(&mut self.net, &grads);
        self.target.soft_update(&self.net, self.params.tau)?;
        Ok(UpdateStats {
            critic_loss: loss,
            actor_objective: None,
        })
    }
}
