//! Episode loop shared by the three learners, presets, logs and
//! checkpoint-backed policies.

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    dqn, naf_decompose, Batch, DdpgAgent, DqnAgent, LinearSchedule, NafAgent, OuNoise, ReplayBuffer,
    Transition, UpdateParams, UpdateStats,
};
use crate::env::{rollout, EnvError, Observation, ObservationMode, TrainEnv};
use crate::guard::action_levels;
use crate::metrics::{self, EvaluationReport, MetricsError, Trajectory};
use crate::neural::{AdamConfig, Checkpoint, CheckpointError, Mlp, NeuralError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Stod,
    Ston,
    Itor,
}

impl Algo {
    pub const ALL: [Algo; 3] = [Algo::Stod, Algo::Ston, Algo::Itor];

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Stod => "stod",
            Algo::Ston => "ston",
            Algo::Itor => "itor",
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "stod" => Ok(Algo::Stod),
            "ston" => Ok(Algo::Ston),
            "itor" => Ok(Algo::Itor),
            other => Err(format!("unknown algorithm {other:?} (expected stod, ston or itor)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(format!("unknown preset {other:?} (expected paper or desk)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub algo: Algo,
    pub preset: Preset,
    pub episodes: usize,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    /// STOD actor.
    pub actor_lr: f64,
    /// STOD critic.
    pub critic_lr: f64,
    /// STON and ITOR networks.
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub reward_scale: f64,
    pub clip_norm: Option<f64>,
    pub buffer_capacity: usize,
    pub warmup: usize,
    pub naf_iterations: usize,
    pub ou_theta: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of the episodes over which exploration decays.
    pub decay_fraction: f64,
    pub action_levels: usize,
    /// Greedy evaluation period in episodes for best-policy tracking; 0 disables.
    pub eval_every: usize,
    /// Periodic checkpoint period in episodes; 0 disables.
    pub checkpoint_every: usize,
}

impl AgentConfig {
    pub fn preset(algo: Algo, preset: Preset) -> Self {
        let paper = Self {
            algo,
            preset,
            episodes: 1750,
            hidden: vec![400, 300, 200, 100, 32],
            batch_size: 256,
            actor_lr: 1e-4,
            critic_lr: 5e-5,
            lr: 1e-4,
            gamma: 0.99,
            tau: 1e-3,
            reward_scale: 1.0,
            clip_norm: None,
            buffer_capacity: 100_000,
            warmup: 1000,
            naf_iterations: 4,
            ou_theta: 0.15,
            sigma_start: 0.2,
            sigma_end: 0.02,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            decay_fraction: 0.8,
            action_levels: 11,
            eval_every: 0,
            checkpoint_every: 250,
        };
        match preset {
            Preset::Paper => paper,
            Preset::Desk => Self {
                episodes: 300,
                hidden: vec![64, 64],
                batch_size: 64,
                actor_lr: 1e-4,
                critic_lr: 1e-3,
                lr: 1e-3,
                tau: 5e-3,
                reward_scale: 0.01,
                eval_every: 1,
                checkpoint_every: 0,
                ..paper
            },
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.episodes == 0 {
            return bad("episodes must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("batch_size must be positive and fit in the buffer");
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr), ("lr", self.lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("gamma must lie in [0, 1] and tau in (0, 1]");
        }
        if !(self.reward_scale > 0.0) {
            return bad("reward_scale must be positive");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive when set");
        }
        if self.naf_iterations == 0 {
            return bad("naf_iterations must be at least 1");
        }
        if self.action_levels < 3 || self.action_levels.is_multiple_of(2) {
            return bad("action_levels must be odd and at least 3 so that 0 is a level");
        }
        if !(0.0..=1.0).contains(&self.decay_fraction) {
            return bad("decay_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    fn update_params(&self) -> UpdateParams {
        UpdateParams {
            gamma: self.gamma,
            tau: self.tau,
            reward_scale: self.reward_scale,
        }
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("agent config serializes")
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("training diverged at episode {episode}, step {step}: {detail}")]
    Divergence {
        episode: usize,
        step: usize,
        detail: String,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Network(#[from] NeuralError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Io(String),
}

/// A greedy controller restored from, or exported to, a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Stod { actor: Mlp },
    Ston { net: Mlp },
    Itor { net: Mlp, levels: Vec<f64> },
}

impl Policy {
    pub fn algo(&self) -> Algo {
        match self {
            Policy::Stod { .. } => Algo::Stod,
            Policy::Ston { .. } => Algo::Ston,
            Policy::Itor { .. } => Algo::Itor,
        }
    }

    fn net(&self) -> &Mlp {
        match self {
            Policy::Stod { actor } => actor,
            Policy::Ston { net } | Policy::Itor { net, .. } => net,
        }
    }

    /// The observation the network was trained on, read off its input width.
    pub fn observation_mode(&self) -> Option<ObservationMode> {
        let width = self.net().input_dim();
        [ObservationMode::Kinematic, ObservationMode::Augmented]
            .into_iter()
            .find(|m| m.dim() == width)
    }

    /// # Panics
    /// If the observation does not match the network's input width; use
    /// [`Policy::prepare_env`] to get a matching environment.
    pub fn act(&self, obs: &Observation) -> f64 {
        let x = obs.features();
        let out = self.net().predict_one(&x).expect("observation width matches the network");
        match self {
            Policy::Stod { .. } => out[0],
            Policy::Ston { .. } => naf_decompose(&out, 0.0).mu,
            Policy::Itor { levels, .. } => levels[dqn::argmax(&out)],
        }
    }

    /// The environment this policy acts in: the observation matches the
    /// network and ITOR is restricted to its levels.
    pub fn prepare_env(&self, env: &TrainEnv) -> Result<TrainEnv, EnvError> {
        let mode = self.observation_mode().ok_or_else(|| {
            EnvError::Config(format!("no observation mode has {} features", self.net().input_dim()))
        })?;
        let env = env.clone().with_observation(mode);
        match self {
            Policy::Itor { levels, .. } => env.with_action_levels(levels.clone()),
            _ => Ok(env),
        }
    }

    /// Noise-free episode.
    pub fn run(&self, env: &TrainEnv) -> Result<(Trajectory, f64), EnvError> {
        let mut env = self.prepare_env(env)?;
        rollout(&mut env, |obs, _| self.act(obs))
    }

    pub fn to_checkpoint(&self, mut metadata: toml::Table) -> Checkpoint {
        metadata.insert("algo".into(), self.algo().as_str().into());
        if let Policy::Itor { levels, .. } = self {
            metadata.insert(
                "action_levels".into(),
                toml::Value::Array(levels.iter().map(|&l| l.into()).collect()),
            );
        }
        let mut ck = Checkpoint::new(metadata);
        match self {
            Policy::Stod { actor } => ck.push("actor", actor),
            Policy::Ston { net } => ck.push("naf", net),
            Policy::Itor { net, .. } => ck.push("q", net),
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        let algo: Algo = ck
            .metadata
            .get("algo")
            .and_then(|v| v.as_str())
            .ok_or_else(|| TrainError::Config("checkpoint metadata lacks an algo tag".into()))?
            .parse()
            .map_err(TrainError::Config)?;
        Ok(match algo {
            Algo::Stod => Policy::Stod {
                actor: ck.get("actor")?.clone(),
            },
            Algo::Ston => Policy::Ston {
                net: ck.get("naf")?.clone(),
            },
            Algo::Itor => {
                let levels = ck
                    .metadata
                    .get("action_levels")
                    .and_then(|v| v.as_array())
                    .ok_or_else(|| TrainError::Config("ITOR checkpoint lacks action_levels".into()))?
                    .iter()
                    .map(|v| v.as_float().ok_or_else(|| TrainError::Config("non-numeric action level".into())))
                    .collect::<Result<Vec<_>, _>>()?;
                Policy::Itor {
                    net: ck.get("q")?.clone(),
                    levels,
                }
            }
        })
    }
}

enum Learner {
    Stod(DdpgAgent),
    Ston(NafAgent),
    Itor(DqnAgent),
}

impl Learner {
    fn new(cfg: &AgentConfig, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self, NeuralError> {
        let p = cfg.update_params();
        Ok(match cfg.algo {
            Algo::Stod => Learner::Stod(DdpgAgent::new(
                dim,
                &cfg.hidden,
                cfg.adam(cfg.actor_lr),
                cfg.adam(cfg.critic_lr),
                p,
                rng,
            )?),
            Algo::Ston => Learner::Ston(NafAgent::new(dim, &cfg.hidden, cfg.adam(cfg.lr), p, rng)?),
            Algo::Itor => Learner::Itor(DqnAgent::new(
                dim,
                &cfg.hidden,
                action_levels(cfg.action_levels),
                cfg.adam(cfg.lr),
                p,
                rng,
            )?),
        })
    }

    fn explore(&self, obs: &[f64], noise: &mut OuNoise, epsilon: f64, rng: &mut ChaCha8Rng) -> Result<f64, NeuralError> {
        match self {
            Learner::Stod(a) => a.act(obs, noise.sample(rng)),
            Learner::Ston(a) => a.act(obs, noise.sample(rng)),
            Learner::Itor(a) => a.act(obs, epsilon, rng),
        }
    }

    fn update(&mut self, batch: &Batch) -> Result<UpdateStats, NeuralError> {
        match self {
            Learner::Stod(a) => a.update(batch),
            Learner::Ston(a) => a.update(batch),
            Learner::Itor(a) => a.update(batch),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Learner::Stod(a) => a.actor.is_finite() && a.critic.is_finite(),
            Learner::Ston(a) => a.net.is_finite(),
            Learner::Itor(a) => a.net.is_finite(),
        }
    }

    fn policy(&self) -> Policy {
        match self {
            Learner::Stod(a) => Policy::Stod { actor: a.actor.clone() },
            Learner::Ston(a) => Policy::Ston { net: a.net.clone() },
            Learner::Itor(a) => Policy::Itor {
                net: a.net.clone(),
                levels: a.levels.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub steps: usize,
    pub arrival_time_s: Option<f64>,
    #[serde(rename = "I_t")]
    pub i_t: u8,
    #[serde(rename = "I_s")]
    pub i_s: u8,
    #[serde(rename = "I_e")]
    pub i_e: f64,
    #[serde(rename = "I_c")]
    pub i_c: f64,
    pub critic_loss: Option<f64>,
    pub wall_ms: u64,
}

pub fn write_log<W: Write>(writer: W, rows: &[TrainLogRow]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Record elapsed wall time per episode; when off `wall_ms` is 0 so logs
    /// are byte-for-byte reproducible.
    pub wall_clock: bool,
    /// Destination of periodic checkpoints and divergence dumps.
    pub output_dir: Option<PathBuf>,
    /// Extra metadata stored in every checkpoint (config echo).
    pub metadata: toml::Table,
}

#[derive(Debug, Clone)]
pub struct BestPolicy {
    pub policy: Policy,
    pub episode: usize,
    pub report: Option<EvaluationReport>,
    pub episode_return: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_policy: Policy,
    /// Best greedy policy seen at the periodic evaluations, if enabled.
    pub best: Option<BestPolicy>,
    pub log: Vec<TrainLogRow>,
    pub metadata: toml::Table,
}

impl TrainOutcome {
    /// The best tracked policy, falling back to the final one.
    pub fn selected_policy(&self) -> &Policy {
        self.best.as_ref().map_or(&self.final_policy, |b| &b.policy)
    }
}

/// Orders greedy evaluations: punctual and safe first, then lower energy;
/// otherwise higher return.
fn better(candidate: (&Option<EvaluationReport>, f64), incumbent: (&Option<EvaluationReport>, f64)) -> bool {
    let ok = |r: &Option<EvaluationReport>| r.as_ref().is_some_and(|r| r.safety == 1 && r.punctuality == 1);
    match (ok(candidate.0), ok(incumbent.0)) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => candidate.0.as_ref().unwrap().energy < incumbent.0.as_ref().unwrap().energy,
        (false, false) => candidate.1 > incumbent.1,
    }
}

fn dump_divergence(opts: &TrainOptions, text: &str) {
    if let Some(dir) = &opts.output_dir {
        let _ = std::fs::create_dir_all(dir);
        let _ = std::fs::write(dir.join("divergence.txt"), text);
    }
}

pub fn train(
    env: &TrainEnv,
    cfg: &AgentConfig,
    seed: u64,
    opts: &TrainOptions,
    mut on_episode: impl FnMut(&TrainLogRow),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let mut learner = Learner::new(cfg, env.config().observation.dim(), &mut init_rng)?;
    let mut env = learner.policy().prepare_env(env)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut noise = OuNoise::new(cfg.ou_theta, cfg.sigma_start, 1.0);
    let sigma = LinearSchedule {
        start: cfg.sigma_start,
        end: cfg.sigma_end,
        fraction: cfg.decay_fraction,
    };
    let epsilon = LinearSchedule {
        start: cfg.epsilon_start,
        end: cfg.epsilon_end,
        fraction: cfg.decay_fraction,
    };
    let updates_per_step = if cfg.algo == Algo::Ston { cfg.naf_iterations } else { 1 };

    let mut metadata = opts.metadata.clone();
    metadata.insert("seed".into(), toml::Value::Integer(seed as i64));
    metadata.insert("agent".into(), toml::Value::Table(cfg.to_table()));

    let mut log = Vec::with_capacity(cfg.episodes);
    let mut best: Option<BestPolicy> = None;
    let dest = env.line().destination_m();

    for episode in 0..cfg.episodes {
        let started = Instant::now();
        noise.reset();
        noise.sigma = sigma.value(episode, cfg.episodes);
        let eps = epsilon.value(episode, cfg.episodes);
        let mut obs = env.reset();
        let mut ep_return = 0.0;
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        let mut step = 0usize;
        loop {
            let x = obs.features();
            let proposed = learner.explore(&x, &mut noise, eps, &mut rng)?;
            let res = match env.step(proposed) {
                Ok(r) => r,
                Err(EnvError::Divergence { reward, bound, t_s }) => {
                    let detail = format!("reward {reward} beyond bound {bound} at t = {t_s} s");
                    dump_divergence(opts, &format!("episode {episode}\nstep {step}\n{detail}\n"));
                    return Err(TrainError::Divergence { episode, step, detail });
                }
                Err(e) => return Err(e.into()),
            };
            buffer.push(Transition {
                x,
                a: res.info.applied_u,
                r: res.reward,
                x_next: res.obs.features(),
                done: res.done,
            });
            ep_return += res.reward;
            obs = res.obs;

            if buffer.len() >= cfg.warmup.max(cfg.batch_size) {
                for _ in 0..updates_per_step {
                    let batch = Batch::from_transitions(&buffer.sample(cfg.batch_size, &mut rng).expect("warm buffer"));
                    let stats = learner.update(&batch)?;
                    if !stats.critic_loss.is_finite() || !learner.is_finite() {
                        let detail = format!("non-finite loss {} or weights", stats.critic_loss);
                        dump_divergence(
                            opts,
                            &format!(
                                "episode {episode}\nstep {step}\n{detail}\nlast transition {:?}\n",
                                buffer.iter().last()
                            ),
                        );
                        return Err(TrainError::Divergence { episode, step, detail });
                    }
                    loss_sum += stats.critic_loss;
                    loss_n += 1;
                }
            }
            step += 1;
            if res.done {
                break;
            }
        }

        let traj = env.take_trajectory();
        let row = log_row(episode, ep_return, &traj, &env, dest, loss_sum, loss_n, opts, started);
        on_episode(&row);
        log.push(row);

        let last = episode + 1 == cfg.episodes;
        if cfg.eval_every > 0 && ((episode + 1) % cfg.eval_every == 0 || last) {
            let policy = learner.policy();
            let (traj, ret) = policy.run(&env)?;
            let report = metrics::evaluate(&traj, env.line()).ok();
            let replace = best
                .as_ref()
                .is_none_or(|b| better((&report, ret), (&b.report, b.episode_return)));
            if replace {
                best = Some(BestPolicy {
                    policy,
                    episode: episode + 1,
                    report,
                    episode_return: ret,
                });
            }
        }
        if let Some(dir) = &opts.output_dir {
            if cfg.checkpoint_every > 0 && (episode + 1) % cfg.checkpoint_every == 0 {
                let mut meta = metadata.clone();
                meta.insert("episode".into(), toml::Value::Integer(episode as i64 + 1));
                std::fs::create_dir_all(dir).map_err(|e| TrainError::Io(e.to_string()))?;
                learner
                    .policy()
                    .to_checkpoint(meta)
                    .save(dir.join(format!("checkpoint_ep{:05}.ckpt", episode + 1)))?;
            }
        }
    }

    Ok(TrainOutcome {
        final_policy: learner.policy(),
        best,
        log,
        metadata,
    })
}

#[allow(clippy::too_many_arguments)]
fn log_row(
    episode: usize,
    ep_return: f64,
    traj: &Trajectory,
    env: &TrainEnv,
    dest: f64,
    loss_sum: f64,
    loss_n: usize,
    opts: &TrainOptions,
    started: Instant,
) -> TrainLogRow {
    let arrival = traj.arrival_time_s(dest).ok();
    let dt = env.config().dt_s;
    TrainLogRow {
        episode: episode + 1,
        episode_return: ep_return,
        steps: traj.step_records().count(),
        arrival_time_s: arrival,
        i_t: arrival.map_or(0, |t| metrics::punctuality_from_times(t, env.line().planning_trip_time_s()).0),
        i_s: metrics::safety_index(traj, env.line()),
        i_e: metrics::energy_index(traj, dt),
        i_c: metrics::comfort_index(traj, dt, metrics::COMFORT_THRESHOLD),
        critic_loss: (loss_n > 0).then(|| loss_sum / loss_n as f64),
        wall_ms: if opts.wall_clock {
            started.elapsed().as_millis() as u64
        } else {
            0
        },
    }
}
