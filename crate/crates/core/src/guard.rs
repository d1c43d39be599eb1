//! Expert-rule shield applied to every proposed action.
//!
//! Rules, in priority order:
//!
//! 1. Safe-velocity brake: brake at `u_min` when the speed reaches the safe
//!    velocity for the next lower limit, or when even coasting this step
//!    would leave no safe way to brake afterwards.
//! 2. No direct transition between accelerating and braking; the step is
//!    replaced by a coasting step.
//! 3. Start cap: while below the start speed threshold, acceleration is
//!    capped.
//! 4. Limit clamp: an accelerating command is reduced to the largest value
//!    that still leaves a safe fallback.
//!
//! The fallback checked by rules 1 and 4 is "this command, one coasting
//! step if it accelerates, then `u_min` until settled". It is simulated with
//! the same integrator and actuator state the environment uses, so the plan
//! checked at one step is exactly the plan available at the next. Every
//! command the guard emits therefore keeps a safe continuation, which is
//! what makes the safety index hold for arbitrary policies.

use std::ops::ControlFlow;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{integrate_control_step_observed, ActuatorState, TrainParams, TrainState};
use crate::line::LineProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardConfig {
    /// Speed proportional coefficient of the safe velocity.
    pub beta: f64,
    pub u_min: f64,
    pub start_accel_cap: f64,
    /// Half-width of the coasting band.
    pub coast_band: f64,
    pub start_speed_threshold: f64,
    /// Highest speed at which the train may pass the stopping point.
    pub arrival_speed_cap: f64,
    /// Horizon after which an unsettled fallback counts as unsafe.
    pub lookahead_limit_s: f64,
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self {
            beta: 0.95,
            u_min: -1.0,
            start_accel_cap: 0.6,
            coast_band: 0.05,
            start_speed_threshold: 2.0,
            arrival_speed_cap: 2.0,
            lookahead_limit_s: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid guard config: {0}")]
pub struct GuardConfigError(pub String);

impl GuardConfig {
    pub fn validate(&self) -> Result<(), GuardConfigError> {
        let err = |m: &str| Err(GuardConfigError(m.to_string()));
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return err("beta must lie in (0, 1]");
        }
        if !(self.u_min < 0.0 && self.u_min >= -1.0) {
            return err("u_min must lie in [-1, 0)");
        }
        if !(self.start_accel_cap > 0.0) {
            return err("start_accel_cap must be positive");
        }
        if !(self.coast_band >= 0.0 && self.coast_band < 1.0) {
            return err("coast_band must lie in [0, 1)");
        }
        if !(self.start_speed_threshold >= 0.0) {
            return err("start_speed_threshold must be >= 0");
        }
        if !(self.arrival_speed_cap > 0.0) {
            return err("arrival_speed_cap must be positive");
        }
        if !(self.lookahead_limit_s > 0.0) {
            return err("lookahead_limit_s must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DrivingState {
    Accelerating,
    Coasting,
    Braking,
}

pub fn classify_state(u: f64, cfg: &GuardConfig) -> DrivingState {
    if u > cfg.coast_band {
        DrivingState::Accelerating
    } else if u < -cfg.coast_band {
        DrivingState::Braking
    } else {
        DrivingState::Coasting
    }
}

/// Whether going from `prev` to `next` skips the coasting state.
pub fn is_direct_transition(prev: DrivingState, next: DrivingState) -> bool {
    matches!(
        (prev, next),
        (DrivingState::Accelerating, DrivingState::Braking)
            | (DrivingState::Braking, DrivingState::Accelerating)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RuleFired {
    #[default]
    None,
    NoDirectTransition,
    StartCap,
    SafeVelocityBrake,
    CurrentLimitClamp,
}

impl RuleFired {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleFired::None => "none",
            RuleFired::NoDirectTransition => "no_direct_transition",
            RuleFired::StartCap => "start_cap",
            RuleFired::SafeVelocityBrake => "safe_velocity_brake",
            RuleFired::CurrentLimitClamp => "current_limit_clamp",
        }
    }
}

impl FromStr for RuleFired {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "none" => RuleFired::None,
            "no_direct_transition" => RuleFired::NoDirectTransition,
            "start_cap" => RuleFired::StartCap,
            "safe_velocity_brake" => RuleFired::SafeVelocityBrake,
            "current_limit_clamp" => RuleFired::CurrentLimitClamp,
            other => return Err(format!("unknown guard rule {other:?}")),
        })
    }
}

impl std::fmt::Display for RuleFired {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardDecision {
    pub final_u: f64,
    pub rule_fired: RuleFired,
}

/// `sqrt(β v_next² - 2 u_min (s_limit - s))` for the next lower limit ahead.
pub fn safe_velocity(line: &LineProfile, s: f64, cfg: &GuardConfig) -> Option<f64> {
    line.next_limit_drop(s).map(|(s_limit, v_next)| {
        (cfg.beta * v_next * v_next - 2.0 * cfg.u_min * (s_limit - s)).sqrt()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Safe,
    Unsafe,
}

/// The rule set bound to the control and physics step sizes it projects with.
#[derive(Debug, Clone, PartialEq)]
pub struct Guard {
    cfg: GuardConfig,
    dt_s: f64,
    substep_s: f64,
}

impl Guard {
    pub fn new(cfg: GuardConfig, dt_s: f64, substep_s: f64) -> Result<Self, GuardConfigError> {
        cfg.validate()?;
        if !(dt_s > 0.0 && substep_s > 0.0) {
            return Err(GuardConfigError("step sizes must be positive".into()));
        }
        Ok(Self {
            cfg,
            dt_s,
            substep_s,
        })
    }

    pub fn config(&self) -> &GuardConfig {
        &self.cfg
    }

    fn brake(&self) -> GuardDecision {
        GuardDecision {
            final_u: self.cfg.u_min,
            rule_fired: RuleFired::SafeVelocityBrake,
        }
    }

    pub fn filter_action(
        &self,
        proposed: f64,
        state: &TrainState,
        actuator: &ActuatorState,
        line: &LineProfile,
        params: &TrainParams,
    ) -> GuardDecision {
        let cfg = &self.cfg;
        let u = if proposed.is_nan() {
            0.0
        } else {
            proposed.clamp(-1.0, 1.0)
        };

        if safe_velocity(line, state.s_m, cfg).is_some_and(|vs| state.v_mps >= vs) {
            return self.brake();
        }
        if !self.plan_is_safe(0.0, state, actuator, line, params) {
            return self.brake();
        }

        let prev = classify_state(state.u_commanded_prev, cfg);
        if is_direct_transition(prev, classify_state(u, cfg)) {
            return GuardDecision {
                final_u: 0.0,
                rule_fired: RuleFired::NoDirectTransition,
            };
        }

        let mut decision = GuardDecision {
            final_u: u,
            rule_fired: RuleFired::None,
        };
        if state.v_mps < cfg.start_speed_threshold && u > cfg.start_accel_cap {
            decision = GuardDecision {
                final_u: cfg.start_accel_cap,
                rule_fired: RuleFired::StartCap,
            };
        }
        let cand = decision.final_u;
        if cand != 0.0 && !self.plan_is_safe(cand, state, actuator, line, params) {
            if cand < 0.0 {
                return self.brake();
            }
            decision = GuardDecision {
                final_u: self.largest_safe(cand, state, actuator, line, params),
                rule_fired: RuleFired::CurrentLimitClamp,
            };
        }
        decision
    }

    /// [`Guard::filter_action`] restricted to a finite action set. Values the
    /// rules produce off the set are moved down to the nearest safe level.
    /// `levels` must be sorted ascending and contain `0` and `u_min`.
    pub fn filter_action_discrete(
        &self,
        proposed: f64,
        state: &TrainState,
        actuator: &ActuatorState,
        line: &LineProfile,
        params: &TrainParams,
        levels: &[f64],
    ) -> GuardDecision {
        let decision = self.filter_action(proposed, state, actuator, line, params);
        if levels.contains(&decision.final_u) {
            return decision;
        }
        let fallback = levels
            .iter()
            .rev()
            .filter(|&&l| l < decision.final_u)
            .find(|&&l| l == 0.0 || self.plan_is_safe(l, state, actuator, line, params))
            .copied()
            .unwrap_or(0.0);
        GuardDecision {
            final_u: fallback,
            rule_fired: if decision.rule_fired == RuleFired::None {
                RuleFired::CurrentLimitClamp
            } else {
                decision.rule_fired
            },
        }
    }

    fn largest_safe(
        &self,
        upper: f64,
        state: &TrainState,
        actuator: &ActuatorState,
        line: &LineProfile,
        params: &TrainParams,
    ) -> f64 {
        // Accelerating plans carry an extra coasting step, so feasibility is
        // only monotone within the accelerating range.
        let mut lo = self.cfg.coast_band + 1e-6;
        if upper <= lo || !self.plan_is_safe(lo, state, actuator, line, params) {
            return 0.0;
        }
        let mut hi = upper;
        for _ in 0..14 {
            let mid = 0.5 * (lo + hi);
            if self.plan_is_safe(mid, state, actuator, line, params) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Whether issuing `first` now keeps a safe fallback.
    pub fn plan_is_safe(
        &self,
        first: f64,
        state: &TrainState,
        actuator: &ActuatorState,
        line: &LineProfile,
        params: &TrainParams,
    ) -> bool {
        let cfg = &self.cfg;
        let accelerating = classify_state(first, cfg) == DrivingState::Accelerating;
        let brake_from = if accelerating { 2 } else { 1 };
        let dest = line.destination_m();
        let settled_u = 0.9 * cfg.u_min;
        let max_steps = (cfg.lookahead_limit_s / self.dt_s).ceil() as usize;

        let mut st = *state;
        let mut act = actuator.clone();
        for j in 0..max_steps {
            let cmd = match j {
                0 => first,
                _ if j < brake_from => 0.0,
                _ => cfg.u_min,
            };
            let braking = j >= brake_from;
            let flow = integrate_control_step_observed(
                &st,
                &mut act,
                params,
                line,
                cmd,
                self.dt_s,
                self.substep_s,
                |x| {
                    if x.s_m >= dest {
                        return ControlFlow::Break(if x.v_mps <= cfg.arrival_speed_cap {
                            Verdict::Safe
                        } else {
                            Verdict::Unsafe
                        });
                    }
                    if x.v_mps > line.speed_limit_clamped(x.s_m) {
                        return ControlFlow::Break(Verdict::Unsafe);
                    }
                    let settled = braking
                        && x.u_actual <= settled_u
                        && x.v_mps <= cfg.arrival_speed_cap.min(line.min_limit_ahead_clamped(x.s_m));
                    if settled {
                        return ControlFlow::Break(Verdict::Safe);
                    }
                    ControlFlow::Continue(())
                },
            );
            match flow {
                ControlFlow::Break(verdict) => return verdict == Verdict::Safe,
                ControlFlow::Continue(out) => st = out.state,
            }
            // The state after an accelerating step must not trip the
            // safe-velocity brake, or the next step would brake directly.
            if accelerating && j == 0 && safe_velocity(line, st.s_m, cfg).is_some_and(|vs| st.v_mps >= vs) {
                return false;
            }
        }
        false
    }
}

/// `n` evenly spaced levels covering `[-1, 1]`.
pub fn action_levels(n: usize) -> Vec<f64> {
    assert!(n >= 2, "need at least two action levels");
    let half = (n - 1) as f64;
    (0..n).map(|i| (2.0 * i as f64 - half) / half).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::line::TrackSection;

    fn params() -> TrainParams {
        TrainParams::dkz32()
    }

    fn long_flat() -> LineProfile {
        LineProfile::new(vec![TrackSection::new(0.0, 5000.0, 25.0, 0.0, None)], 5000.0, 400.0)
            .unwrap()
    }

    fn drop_line() -> LineProfile {
        LineProfile::new(
            vec![
                TrackSection::new(0.0, 1000.0, 25.0, 0.0, None),
                TrackSection::new(1000.0, 3000.0, 15.0, 0.0, None),
            ],
            3000.0,
            300.0,
        )
        .unwrap()
    }

    #[test]
    fn safe_velocity_closed_form() {
        let cfg = GuardConfig {
            beta: 1.0,
            ..GuardConfig::default()
        };
        let v = safe_velocity(&drop_line(), 950.0, &cfg).unwrap();
        assert!((v - 325f64.sqrt()).abs() < 1e-12);
        let at = safe_velocity(&drop_line(), 999.999999, &GuardConfig::default()).unwrap();
        assert!((at - 0.95f64.sqrt() * 15.0).abs() < 1e-4);
        assert_eq!(safe_velocity(&long_flat(), 10.0, &cfg), None);
    }

    #[test]
    fn safe_velocity_decreases_toward_the_boundary() {
        let cfg = GuardConfig::default();
        let line = drop_line();
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let v = safe_velocity(&line, i as f64 * 9.99, &cfg).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn classification_band_is_inclusive() {
        let cfg = GuardConfig::default();
        assert_eq!(classify_state(0.0, &cfg), DrivingState::Coasting);
        assert_eq!(classify_state(0.5, &cfg), DrivingState::Accelerating);
        assert_eq!(classify_state(-0.05, &cfg), DrivingState::Coasting);
        assert_eq!(classify_state(-0.06, &cfg), DrivingState::Braking);
    }

    #[test]
    fn rule_names_round_trip() {
        for r in [
            RuleFired::None,
            RuleFired::NoDirectTransition,
            RuleFired::StartCap,
            RuleFired::SafeVelocityBrake,
            RuleFired::CurrentLimitClamp,
        ] {
            assert_eq!(r.as_str().parse::<RuleFired>().unwrap(), r);
        }
        assert!("brake".parse::<RuleFired>().is_err());
    }

    #[test]
    fn accelerating_to_braking_forces_a_coast() {
        let p = params();
        let guard = Guard::new(GuardConfig::default(), 1.0, 0.1).unwrap();
        let state = TrainState {
            s_m: 100.0,
            v_mps: 8.0,
            u_actual: 0.8,
            u_commanded_prev: 0.8,
            ..TrainState::default()
        };
        let act = ActuatorState::new(&p, 0.1);
        let d = guard.filter_action(-0.5, &state, &act, &long_flat(), &p);
        assert_eq!(d.final_u, 0.0);
        assert_eq!(d.rule_fired, RuleFired::NoDirectTransition);
    }

    #[test]
    fn start_phase_is_capped() {
        let p = params();
        let guard = Guard::new(GuardConfig::default(), 1.0, 0.1).unwrap();
        let state = TrainState {
            v_mps: 0.5,
            ..TrainState::default()
        };
        let act = ActuatorState::new(&p, 0.1);
        let d = guard.filter_action(0.9, &state, &act, &long_flat(), &p);
        assert_eq!(d.final_u, 0.6);
        assert_eq!(d.rule_fired, RuleFired::StartCap);
    }

    #[test]
    fn speed_at_safe_velocity_brakes() {
        let p = params();
        let cfg = GuardConfig {
            beta: 1.0,
            ..GuardConfig::default()
        };
        let guard = Guard::new(cfg, 1.0, 0.1).unwrap();
        let state = TrainState {
            s_m: 950.0,
            v_mps: 18.1,
            ..TrainState::default()
        };
        let act = ActuatorState::new(&p, 0.1);
        let d = guard.filter_action(0.3, &state, &act, &drop_line(), &p);
        assert_eq!(d.final_u, -1.0);
        assert_eq!(d.rule_fired, RuleFired::SafeVelocityBrake);
    }

    #[test]
    fn pass_through_far_from_constraints() {
        let p = params();
        let guard = Guard::new(GuardConfig::default(), 1.0, 0.1).unwrap();
        let state = TrainState {
            s_m: 100.0,
            v_mps: 5.0,
            ..TrainState::default()
        };
        let act = ActuatorState::new(&p, 0.1);
        let d = guard.filter_action(0.7, &state, &act, &long_flat(), &p);
        assert_eq!(d, GuardDecision { final_u: 0.7, rule_fired: RuleFired::None });
    }

    #[test]
    fn acceleration_near_the_limit_is_clamped() {
        let p = params();
        let guard = Guard::new(GuardConfig::default(), 1.0, 0.1).unwrap();
        let state = TrainState {
            s_m: 100.0,
            v_mps: 24.7,
            ..TrainState::default()
        };
        let act = ActuatorState::new(&p, 0.1);
        let d = guard.filter_action(1.0, &state, &act, &long_flat(), &p);
        assert_eq!(d.rule_fired, RuleFired::CurrentLimitClamp);
        assert!(d.final_u < 1.0 && d.final_u >= 0.0);
    }

    #[test]
    fn discrete_levels_are_exact_decimals() {
        let levels = action_levels(11);
        assert_eq!(levels.len(), 11);
        assert_eq!(levels[0], -1.0);
        assert_eq!(levels[5], 0.0);
        assert_eq!(levels[8], 0.6);
        assert_eq!(levels[10], 1.0);
    }

    #[test]
    fn discrete_filter_stays_on_the_grid() {
        let p = params();
        let guard = Guard::new(GuardConfig::default(), 1.0, 0.1).unwrap();
        let levels = action_levels(11);
        let act = ActuatorState::new(&p, 0.1);
        for v in [0.0, 5.0, 23.0, 24.5] {
            let state = TrainState {
                s_m: 100.0,
                v_mps: v,
                ..TrainState::default()
            };
            for &u in &levels {
                let d = guard.filter_action_discrete(u, &state, &act, &long_flat(), &p, &levels);
                assert!(levels.contains(&d.final_u), "{} not on grid", d.final_u);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(GuardConfig::default().validate().is_ok());
        let bad = GuardConfig {
            beta: 1.5,
            ..GuardConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = GuardConfig {
            u_min: 0.1,
            ..GuardConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
