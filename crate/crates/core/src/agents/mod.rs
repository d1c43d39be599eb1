//! Learning agents, the scripted driver and the training loop.

pub mod ddpg;
pub mod dqn;
pub mod naf;
pub mod noise;
pub mod replay;
pub mod scripted;
pub mod train;

pub use ddpg::DdpgAgent;
pub use dqn::DqnAgent;
pub use naf::{naf_decompose, NafAgent, NafValues};
pub use noise::{LinearSchedule, OuNoise};
pub use replay::{ReplayBuffer, Transition};
pub use scripted::{scripted_drive, ScriptedDriver, ScriptedError};
pub use train::{Algo, AgentConfig, Policy, Preset, TrainError, TrainLogRow, TrainOptions, TrainOutcome};

use rand::Rng;

use crate::neural::{LayerSpec, Matrix, Mlp, NeuralError};

/// Bound of the uniform initialization of every output layer.
pub const OUTPUT_INIT_BOUND: f64 = 3e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateParams {
    pub gamma: f64,
    pub tau: f64,
    /// Multiplies rewards before they enter the bootstrap targets.
    pub reward_scale: f64,
}

impl Default for UpdateParams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 1e-3,
            reward_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_objective: Option<f64>,
}

/// `y = scale·r + γ·(1 − done)·next`.
pub fn td_targets(r: &[f64], done: &[bool], next: &[f64], p: &UpdateParams) -> Vec<f64> {
    r.iter()
        .zip(done)
        .zip(next)
        .map(|((&r, &d), &q)| {
            let r = p.reward_scale * r;
            if d {
                r
            } else {
                r + p.gamma * q
            }
        })
        .collect()
}

/// Fan-in uniform initialization with a small output layer.
pub(crate) fn init_net<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Mlp, NeuralError> {
    let mut net = Mlp::init(specs, rng)?;
    let last = specs.len() - 1;
    let fan_in = specs[last].input_dim as f64;
    net.scale_layer(last, (OUTPUT_INIT_BOUND * fan_in.sqrt()).min(1.0));
    Ok(net)
}

/// Column-stacked view of a minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub a: Matrix,
    pub r: Vec<f64>,
    pub x_next: Matrix,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[Transition]) -> Self {
        let n = ts.len();
        let dim = ts.first().map_or(0, |t| t.x.len());
        let mut x = Vec::with_capacity(dim * n);
        let mut xn = Vec::with_capacity(dim * n);
        for t in ts {
            x.extend_from_slice(&t.x);
            xn.extend_from_slice(&t.x_next);
        }
        Self {
            x: Matrix::from_vec(n, dim, x),
            a: Matrix::from_vec(n, 1, ts.iter().map(|t| t.a).collect()),
            r: ts.iter().map(|t| t.r).collect(),
            x_next: Matrix::from_vec(n, dim, xn),
            done: ts.iter().map(|t| t.done).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}
