//! Episodic environment: one inter-station run under the guard.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{integrate_control_step, ActuatorState, TrainParams, TrainState};
use crate::guard::{Guard, GuardConfig, GuardConfigError, GuardDecision, RuleFired};
use crate::line::LineProfile;
use crate::metrics::{comfort_excess, StepData, Trajectory, TrajectoryRecord, COMFORT_THRESHOLD};

/// Commands beyond this magnitude are rejected rather than clamped.
pub const MAX_ACTION_MAGNITUDE: f64 = 1.5;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode is finished; call reset before stepping")]
    EpisodeDone,
    #[error("invalid action {0}: magnitude must not exceed {MAX_ACTION_MAGNITUDE}")]
    InvalidAction(f64),
    #[error("reward {reward} at t = {t_s} s is outside its bound {bound}")]
    Divergence { reward: f64, bound: f64, t_s: f64 },
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error(transparent)]
    Guard(#[from] GuardConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub dt_s: f64,
    pub substep_s: f64,
    /// Episodes are cut off at this multiple of the planning trip time.
    pub t_max_factor: f64,
    pub observation: ObservationMode,
}

/// What the agent sees each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// Normalised position and speed.
    #[default]
    Kinematic,
    /// Position and speed plus the previous command and elapsed time over the
    /// planning trip time. The previous command exposes the actuator dead time
    /// to the learner and the clock exposes how late the train is running.
    Augmented,
}

impl ObservationMode {
    pub fn dim(self) -> usize {
        match self {
            ObservationMode::Kinematic => 2,
            ObservationMode::Augmented => 4,
        }
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt_s: 1.0,
            substep_s: 0.1,
            t_max_factor: 2.0,
            observation: ObservationMode::Kinematic,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.dt_s > 0.0 && self.substep_s > 0.0 && self.substep_s <= self.dt_s) {
            return Err(EnvError::Config(
                "dt_s and substep_s must be positive with substep_s <= dt_s".into(),
            ));
        }
        let ratio = self.dt_s / self.substep_s;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(EnvError::Config("dt_s must be an integer multiple of substep_s".into()));
        }
        if !(self.t_max_factor > 1.0) {
            return Err(EnvError::Config("t_max_factor must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// Energy.
    pub lambda1: f64,
    /// Late running.
    pub lambda2: f64,
    /// Excess jerk.
    pub lambda3: f64,
    /// Overshooting the stopping point.
    pub lambda4: f64,
    /// Arrival time error.
    pub lambda5: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.13,
            lambda2: 30.0,
            lambda3: 10.0,
            lambda4: 400.0,
            lambda5: 70.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), EnvError> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5];
        if all.iter().all(|l| l.is_finite() && *l >= 0.0) {
            Ok(())
        } else {
            Err(EnvError::Config("reward weights must be finite and >= 0".into()))
        }
    }
}

/// The per-step quantities the reward is built from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardTerms {
    pub delta_ie: f64,
    pub delta_ic: f64,
    pub late: bool,
    pub overshoot: bool,
    pub acc: f64,
}

impl RewardTerms {
    /// Terms for a step ending at time `t_s` and raw position `s_m`.
    pub fn at(t_s: f64, s_m: f64, line: &LineProfile, delta_ie: f64, jerk: f64) -> Self {
        let planning = line.planning_trip_time_s();
        let overshoot = s_m > line.destination_m();
        Self {
            delta_ie,
            delta_ic: comfort_excess(jerk, COMFORT_THRESHOLD),
            late: t_s > planning,
            overshoot,
            acc: if overshoot { (t_s - planning).abs() } else { 0.0 },
        }
    }
}

pub fn step_reward(w: &RewardWeights, terms: &RewardTerms) -> f64 {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    -w.lambda1 * terms.delta_ie
        - w.lambda2 * flag(terms.late)
        - w.lambda3 * terms.delta_ic
        - w.lambda4 * flag(terms.overshoot)
        - w.lambda5 * terms.acc
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observation {
    pub s_norm: f64,
    pub v_norm: f64,
    pub u_prev: f64,
    pub t_norm: f64,
    pub mode: ObservationMode,
}

impl Observation {
    pub fn dim(&self) -> usize {
        self.mode.dim()
    }

    /// The network input for this observation's mode.
    pub fn features(&self) -> Vec<f64> {
        match self.mode {
            ObservationMode::Kinematic => vec![self.s_norm, self.v_norm],
            ObservationMode::Augmented => vec![self.s_norm, self.v_norm, self.u_prev, self.t_norm],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub terms: RewardTerms,
    pub jerk: f64,
    pub proposed_u: f64,
    /// The command actually issued after the guard.
    pub applied_u: f64,
    pub rule_fired: RuleFired,
    pub arrived: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct TrainEnv {
    line: LineProfile,
    params: TrainParams,
    cfg: EnvConfig,
    weights: RewardWeights,
    guard: Guard,
    levels: Option<Vec<f64>>,
    v_scale: f64,
    state: TrainState,
    actuator: ActuatorState,
    trajectory: Trajectory,
    done: bool,
}

impl TrainEnv {
    pub fn new(
        line: LineProfile,
        params: TrainParams,
        cfg: EnvConfig,
        weights: RewardWeights,
        guard: GuardConfig,
    ) -> Result<Self, EnvError> {
        cfg.validate()?;
        weights.validate()?;
        params
            .validate()
            .map_err(|e| EnvError::Config(e.to_string()))?;
        let guard = Guard::new(guard, cfg.dt_s, cfg.substep_s)?;
        let actuator = ActuatorState::new(&params, cfg.substep_s);
        let v_scale = 1.1 * line.max_speed_limit();
        let trajectory = Trajectory::new(cfg.dt_s, line.planning_trip_time_s());
        let mut env = Self {
            line,
            params,
            cfg,
            weights,
            guard,
            levels: None,
            v_scale,
            state: TrainState::default(),
            actuator,
            trajectory,
            done: false,
        };
        env.reset();
        Ok(env)
    }

    /// Restricts issued commands to a finite, ascending set of levels that
    /// contains 0 and the guard's braking command.
    pub fn with_action_levels(mut self, levels: Vec<f64>) -> Result<Self, EnvError> {
        let sorted = levels.windows(2).all(|w| w[0] < w[1]);
        if !sorted || !levels.contains(&0.0) || !levels.contains(&self.guard.config().u_min) {
            return Err(EnvError::Config(
                "action levels must ascend and contain 0 and u_min".into(),
            ));
        }
        self.levels = Some(levels);
        Ok(self)
    }

    pub fn with_observation(mut self, mode: ObservationMode) -> Self {
        self.cfg.observation = mode;
        self
    }

    pub fn reset(&mut self) -> Observation {
        self.state = TrainState::default();
        self.actuator.reset();
        self.trajectory = Trajectory::new(self.cfg.dt_s, self.line.planning_trip_time_s());
        self.done = false;
        self.observe()
    }

    pub fn observe(&self) -> Observation {
        Observation {
            s_norm: self.state.s_m / self.line.total_length_m(),
            v_norm: self.state.v_mps / self.v_scale,
            u_prev: self.state.u_commanded_prev,
            t_norm: self.state.t_s / self.line.planning_trip_time_s(),
            mode: self.cfg.observation,
        }
    }

    pub fn line(&self) -> &LineProfile {
        &self.line
    }

    pub fn params(&self) -> &TrainParams {
        &self.params
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &RewardWeights {
        &self.weights
    }

    pub fn guard(&self) -> &Guard {
        &self.guard
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn actuator(&self) -> &ActuatorState {
        &self.actuator
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn take_trajectory(&mut self) -> Trajectory {
        std::mem::replace(
            &mut self.trajectory,
            Trajectory::new(self.cfg.dt_s, self.line.planning_trip_time_s()),
        )
    }

    pub fn t_max_s(&self) -> f64 {
        self.cfg.t_max_factor * self.line.planning_trip_time_s()
    }

    /// What the guard would issue for `proposed` in the current state.
    pub fn filter(&self, proposed: f64) -> GuardDecision {
        match &self.levels {
            Some(levels) => self.guard.filter_action_discrete(
                proposed,
                &self.state,
                &self.actuator,
                &self.line,
                &self.params,
                levels,
            ),
            None => self
                .guard
                .filter_action(proposed, &self.state, &self.actuator, &self.line, &self.params),
        }
    }

    fn reward_bound(&self) -> f64 {
        let w = &self.weights;
        let gain = self.params.actuator_gain.max(1.0);
        let v_max = self.line.max_speed_limit().max(1.0) * 2.0;
        let jerk_max = 4.0 * gain / self.cfg.dt_s;
        w.lambda1 * 2.0 * gain * v_max * self.cfg.dt_s
            + w.lambda2
            + w.lambda3 * jerk_max
            + w.lambda4
            + w.lambda5 * (self.t_max_s() + self.cfg.dt_s)
    }

    pub fn step(&mut self, action: f64) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        if !(action.abs() <= MAX_ACTION_MAGNITUDE) {
            return Err(EnvError::InvalidAction(action));
        }
        let proposed = action.clamp(-1.0, 1.0);
        let decision = self.filter(proposed);
        let before = self.state;
        let out = integrate_control_step(
            &before,
            &mut self.actuator,
            &self.params,
            &self.line,
            decision.final_u,
            self.cfg.dt_s,
            self.cfg.substep_s,
        );
        self.trajectory.records.push(TrajectoryRecord {
            t_s: before.t_s,
            s_m: before.s_m,
            v_mps: before.v_mps,
            u_actual: before.u_actual,
            step: Some(StepData {
                u_cmd: decision.final_u,
                delta_ie: out.delta_ie,
                jerk: out.jerk,
                rule_fired: decision.rule_fired,
            }),
        });

        let after = out.state;
        let dest = self.line.destination_m();
        let terms = RewardTerms::at(after.t_s, after.s_m, &self.line, out.delta_ie, out.jerk);
        let reward = step_reward(&self.weights, &terms);
        let bound = self.reward_bound();
        if !(reward.is_finite() && reward >= -bound) {
            return Err(EnvError::Divergence {
                reward,
                bound,
                t_s: after.t_s,
            });
        }

        let arrived = after.s_m >= dest;
        self.done = arrived || after.t_s >= self.t_max_s();
        self.state = after;
        if self.done {
            self.trajectory.records.push(terminal_record(&before, &after, dest, arrived));
        }
        if arrived {
            self.state.s_m = self.state.s_m.min(dest);
        }

        Ok(StepResult {
            obs: self.observe(),
            reward,
            done: self.done,
            info: StepInfo {
                terms,
                jerk: out.jerk,
                proposed_u: proposed,
                applied_u: decision.final_u,
                rule_fired: decision.rule_fired,
                arrived,
            },
        })
    }
}

/// Final record of an episode; on arrival it is interpolated to the
/// moment the train reaches the destination.
fn terminal_record(before: &TrainState, after: &TrainState, dest: f64, arrived: bool) -> TrajectoryRecord {
    let mut rec = TrajectoryRecord {
        t_s: after.t_s,
        s_m: after.s_m,
        v_mps: after.v_mps,
        u_actual: after.u_actual,
        step: None,
    };
    if arrived {
        let ds = after.s_m - before.s_m;
        let f = if ds > 0.0 {
            ((dest - before.s_m) / ds).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let lerp = |a: f64, b: f64| a + f * (b - a);
        rec.t_s = lerp(before.t_s, after.t_s);
        rec.s_m = dest;
        rec.v_mps = lerp(before.v_mps, after.v_mps);
        rec.u_actual = lerp(before.u_actual, after.u_actual);
    }
    rec
}

/// Runs a full episode and returns the recorded trajectory and the
/// undiscounted return.
pub fn rollout<P>(env: &mut TrainEnv, mut policy: P) -> Result<(Trajectory, f64), EnvError>
where
    P: FnMut(&Observation, &TrainEnv) -> f64,
{
    let mut obs = env.reset();
    let mut total = 0.0;
    loop {
        let a = policy(&obs, env);
        let res = env.step(a)?;
        total += res.reward;
        obs = res.obs;
        if res.done {
            break;
        }
    }
    Ok((env.take_trajectory(), total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::line::TrackSection;

    fn line() -> LineProfile {
        LineProfile::new(vec![TrackSection::new(0.0, 1280.0, 22.22, 0.0, None)], 1280.0, 101.0)
            .unwrap()
    }

    fn env() -> TrainEnv {
        TrainEnv::new(
            line(),
            TrainParams::dkz32(),
            EnvConfig::default(),
            RewardWeights::default(),
            GuardConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn energy_only_step_reward() {
        let terms = RewardTerms::at(50.0, 600.0, &line(), 0.5 * 10.0 * 1.0, 0.1);
        assert_eq!(step_reward(&RewardWeights::default(), &terms), -0.65);
    }

    #[test]
    fn late_step_reward() {
        let terms = RewardTerms::at(102.0, 1000.0, &line(), 0.0, 0.2);
        assert!(terms.late);
        assert_eq!(step_reward(&RewardWeights::default(), &terms), -30.0);
    }

    #[test]
    fn overshooting_arrival_reward() {
        let terms = RewardTerms::at(102.0, 1280.5, &line(), 0.0, 0.0);
        assert!(terms.overshoot);
        assert_eq!(terms.acc, 1.0);
        assert_eq!(step_reward(&RewardWeights::default(), &terms), -30.0 - 400.0 - 70.0);
    }

    #[test]
    fn lateness_indicator_is_strict() {
        assert!(!RewardTerms::at(101.0, 10.0, &line(), 0.0, 0.0).late);
        assert!(RewardTerms::at(101.0 + 1e-9, 10.0, &line(), 0.0, 0.0).late);
        assert!(!RewardTerms::at(90.0, 1280.0, &line(), 0.0, 0.0).overshoot);
    }

    #[test]
    fn reset_observation_is_zero() {
        let mut e = env();
        assert_eq!(e.reset().features(), vec![0.0, 0.0]);
        e.step(0.5).unwrap();
        assert_eq!(e.reset().features(), vec![0.0, 0.0]);
    }

    #[test]
    fn augmented_observation_carries_command_and_clock() {
        let mut e = env().with_observation(ObservationMode::Augmented);
        assert_eq!(e.reset().features(), vec![0.0; 4]);
        let res = e.step(0.5).unwrap();
        let x = res.obs.features();
        assert_eq!(x.len(), 4);
        assert_eq!(x[2], res.info.applied_u);
        assert_eq!(x[3], 1.0 / e.line().planning_trip_time_s());
    }

    #[test]
    fn action_validation() {
        let mut e = env();
        assert!(matches!(e.step(1.6), Err(EnvError::InvalidAction(_))));
        assert!(matches!(e.step(f64::NAN), Err(EnvError::InvalidAction(_))));
        let r = e.step(1.2).unwrap();
        assert_eq!(r.info.proposed_u, 1.0);
    }

    #[test]
    fn zero_policy_times_out() {
        let mut e = env();
        let (traj, ret) = rollout(&mut e, |_, _| 0.0).unwrap();
        let last = traj.last().unwrap();
        assert_eq!(last.t_s, 202.0);
        assert_eq!(last.s_m, 0.0);
        assert_eq!(ret, -30.0 * 101.0);
        assert!(matches!(e.step(0.0), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn config_rejects_fractional_substeps() {
        let cfg = EnvConfig {
            substep_s: 0.3,
            ..EnvConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
