//! Discrete-action Q-learning baseline (ITOR).

use rand::Rng;

use super::{init_net, td_targets, Batch, UpdateParams, UpdateStats};
use crate::neural::{stack, Activation, Adam, AdamConfig, LayerSpec, Matrix, Mlp, NeuralError};

pub fn dqn_specs(obs_dim: usize, hidden: &[usize], n_actions: usize) -> Vec<LayerSpec> {
    stack(obs_dim, hidden, n_actions, Activation::Relu, Activation::Linear)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the level closest to `a`.
pub fn level_index(levels: &[f64], a: f64) -> usize {
    let mut best = 0;
    for (i, &l) in levels.iter().enumerate() {
        if (l - a).abs() < (levels[best] - a).abs() {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub net: Mlp,
    pub target: Mlp,
    pub levels: Vec<f64>,
    opt: Adam,
    pub params: UpdateParams,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        levels: Vec<f64>,
        opt: AdamConfig,
        params: UpdateParams,
        rng: &mut R,
    ) -> Result<Self, NeuralError> {
        let net = init_net(&dqn_specs(obs_dim, hidden, levels.len()), rng)?;
        Ok(Self {
            opt: Adam::new(opt, &net),
            target: net.clone(),
            net,
            levels,
            params,
        })
    }

    pub fn greedy_index(&self, obs: &[f64]) -> Result<usize, NeuralError> {
        Ok(argmax(&self.net.predict_one(obs)?))
    }

    /// ε-greedy choice; returns the level value.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], epsilon: f64, rng: &mut R) -> Result<f64, NeuralError> {
        let idx = if rng.gen::<f64>() < epsilon {
            rng.gen_range(0..self.levels.len())
        } else {
            self.greedy_index(obs)?
        };
        Ok(self.levels[idx])
    }

    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats, NeuralError> {
        let n = batch.len();
        let inv_n = 1.0 / n as f64;
        let k = self.levels.len();
        let next = self.target.predict(&batch.x_next)?;
        let max_next: Vec<f64> = (0..n)
            .map(|i| next.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let y = td_targets(&batch.r, &batch.done, &max_next, &self.params);

        let (q, cache) = self.net.forward(&batch.x)?;
        let mut grad = Matrix::zeros(n, k);
        let mut loss = 0.0;
        for i in 0..n {
            let j = level_index(&self.levels, batch.a.data[i]);
            let d = q.get(i, j) - y[i];
            loss += d * d * inv_n;
            grad.row_mut(i)[j] = 2.0 * d * inv_n;
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
