//! Deterministic actor-critic (STOD).

use rand::Rng;

use super::{init_net, td_targets, Batch, UpdateParams, UpdateStats};
use crate::neural::{stack, Activation, Adam, AdamConfig, Matrix, Mlp, NeuralError};

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub params: UpdateParams,
}

pub fn actor_specs(obs_dim: usize, hidden: &[usize]) -> Vec<crate::neural::LayerSpec> {
    stack(obs_dim, hidden, 1, Activation::Relu, Activation::Tanh)
}

/// The critic sees the observation and the action concatenated.
pub fn critic_specs(obs_dim: usize, hidden: &[usize]) -> Vec<crate::neural::LayerSpec> {
    stack(obs_dim + 1, hidden, 1, Activation::Relu, Activation::Linear)
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        actor_opt: AdamConfig,
        critic_opt: AdamConfig,
        params: UpdateParams,
        rng: &mut R,
    ) -> Result<Self, NeuralError> {
        let actor = init_net(&actor_specs(obs_dim, hidden), rng)?;
        let critic = init_net(&critic_specs(obs_dim, hidden), rng)?;
        Ok(Self {
            actor_opt: Adam::new(actor_opt, &actor),
            critic_opt: Adam::new(critic_opt, &critic),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            params,
        })
    }

    /// Actor output plus `noise`, clamped to `[-1, 1]`.
    pub fn act(&self, obs: &[f64], noise: f64) -> Result<f64, NeuralError> {
        let mu = self.actor.predict_one(obs)?[0];
        Ok((mu + noise).clamp(-1.0, 1.0))
    }

    pub fn q_value(&self, obs: &[f64], a: f64) -> Result<f64, NeuralError> {
        let mut input = obs.to_vec();
        input.push(a);
        Ok(self.critic.predict_one(&input)?[0])
    }

    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats, NeuralError> {
        let n = batch.len();
        let inv_n = 1.0 / n as f64;

        let a_next = self.actor_target.predict(&batch.x_next)?;
        let q_next = self.critic_target.predict(&batch.x_next.hcat(&a_next))?;
        let y = td_targets(&batch.r, &batch.done, &q_next.data, &self.params);

        let (q, cache) = self.critic.forward(&batch.x.hcat(&batch.a))?;
        let mut grad = Matrix::zeros(n, 1);
        let mut loss = 0.0;
        for i in 0..n {
            let d = q.data[i] - y[i];
            loss += d * d * inv_n;
            grad.data[i] = 2.0 * d * inv_n;
        }
        let (critic_grads, _) = self.critic.backward(&cache, &grad)?;
        self.critic_opt.update(&mut self.critic, &critic_grads);

        let (mu, actor_cache) = self.actor.forward(&batch.x)?;
        let (qa, q_cache) = self.critic.forward(&batch.x.hcat(&mu))?;
        let objective = qa.data.iter().sum::<f64>() * inv_n;
        // Ascend Q: descend -Q, routed through the critic's action input.
        let ascend = Matrix::from_vec(n, 1, vec![-inv_n; n]);
        let (_, d_input) = self.critic.backward(&q_cache, &ascend)?;
        let obs_dim = batch.x.cols;
        let (actor_grads, _) = self
            .actor
            .backward(&actor_cache, &d_input.columns(obs_dim, obs_dim + 1))?;
        self.actor_opt.update(&mut self.actor, &actor_grads);

        self.actor_target.soft_update(&self.actor, self.params.tau)?;
        self.critic_target.soft_update(&self.critic, self.params.tau)?;
        Ok(UpdateStats {
            critic_loss: loss,
            actor_objective: Some(objective),
        })
    }
}
