//! Manual-style baseline: full acceleration to a cruise speed, then coast;
//! the guard supplies the braking.

use thiserror::Error;

use crate::dynamics::TrainState;
use crate::env::{rollout, EnvError, TrainEnv};
use crate::metrics::Trajectory;

const CREEP_ACCEL_MPS2: f64 = 0.6;
const CREEP_RELEASE_MPS: f64 = 1.5;
const STOPPED_MPS: f64 = 0.05;
const TOLERANCE_S: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ScriptedError {
    #[error("target time {target_s} s is infeasible: the fastest scripted run takes {fastest_s} s")]
    Infeasible { target_s: f64, fastest_s: f64 },
    #[error("no cruise speed brings the arrival within {TOLERANCE_S} s of {target_s} s (closest {closest_s} s)")]
    NotConverged { target_s: f64, closest_s: f64 },
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Accelerate,
    Coast,
    Creep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedDriver {
    pub cruise_mps: f64,
    phase: Phase,
}

impl ScriptedDriver {
    pub fn new(cruise_mps: f64) -> Self {
        Self {
            cruise_mps,
            phase: Phase::Accelerate,
        }
    }

    pub fn reset(&mut self) {
        self.phase = Phase::Accelerate;
    }

    pub fn command(&mut self, state: &TrainState, destination_m: f64) -> f64 {
        let v = state.v_mps;
        if self.phase == Phase::Accelerate && v >= self.cruise_mps {
            self.phase = Phase::Coast;
        }
        if self.phase == Phase::Creep && v >= CREEP_RELEASE_MPS {
            self.phase = Phase::Coast;
        }
        // Stopped short of the platform after braking: creep forward.
        if self.phase == Phase::Coast && v < STOPPED_MPS && state.s_m < destination_m {
            self.phase = Phase::Creep;
        }
        match self.phase {
            // Full traction, tapered over the last m/s so the profile varies
            // continuously with the cruise speed.
            Phase::Accelerate => (self.cruise_mps - v).clamp(0.0, 1.0),
            Phase::Coast => 0.0,
            Phase::Creep => CREEP_ACCEL_MPS2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedRun {
    pub trajectory: Trajectory,
    pub episode_return: f64,
    pub cruise_mps: f64,
    pub arrival_s: f64,
}

pub fn run_with_cruise(env: &mut TrainEnv, cruise_mps: f64) -> Result<ScriptedRun, EnvError> {
    let mut driver = ScriptedDriver::new(cruise_mps);
    let dest = env.line().destination_m();
    let (trajectory, episode_return) = rollout(env, |_, e| driver.command(e.state(), dest))?;
    let arrival_s = trajectory.arrival_time_s(dest).unwrap_or(f64::INFINITY);
    Ok(ScriptedRun {
        trajectory,
        episode_return,
        cruise_mps,
        arrival_s,
    })
}

/// Finds by bisection the cruise speed whose run arrives within one second
/// of `target_s`.
pub fn scripted_drive(env: &mut TrainEnv, target_s: f64) -> Result<ScriptedRun, ScriptedError> {
    let mut hi = env.line().max_speed_limit();
    let fastest = run_with_cruise(env, hi)?;
    if fastest.arrival_s > target_s + TOLERANCE_S {
        return Err(ScriptedError::Infeasible {
            target_s,
            fastest_s: fastest.arrival_s,
        });
    }
    let mut best = fastest;
    let mut lo = 0.5;
    for _ in 0..60 {
        if (best.arrival_s - target_s).abs() <= 0.5 * TOLERANCE_S {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let run = run_with_cruise(env, mid)?;
        if run.arrival_s > target_s {
            lo = mid;
        } else {
            hi = mid;
        }
        if (run.arrival_s - target_s).abs() < (best.arrival_s - target_s).abs() {
            best = run;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    if (best.arrival_s - target_s).abs() <= TOLERANCE_S {
        Ok(best)
    } else {
        Err(ScriptedError::NotConverged {
            target_s,
            closest_s: best.arrival_s,
        })
    }
}
