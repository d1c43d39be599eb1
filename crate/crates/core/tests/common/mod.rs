#![allow(dead_code)]

use std::path::PathBuf;

use sto_core::dynamics::{DavisCoefficients, DavisUnits, TrainParams};
use sto_core::env::{EnvConfig, RewardWeights, TrainEnv};
use sto_core::guard::GuardConfig;
use sto_core::line::{LineProfile, TrackSection};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn shipped_line() -> LineProfile {
    LineProfile::load(data_dir().join("lines/ylbs_approx.toml")).expect("shipped line loads")
}

pub fn altered_line() -> LineProfile {
    LineProfile::load(data_dir().join("lines/ylbs_altered_gradient.toml")).expect("altered line loads")
}

pub fn flat_line(length_m: f64, limit_mps: f64) -> LineProfile {
    LineProfile::new(vec![TrackSection::new(0.0, length_m, limit_mps, 0.0, None)], length_m, 100.0).unwrap()
}

pub fn env_for(line: LineProfile) -> TrainEnv {
    TrainEnv::new(
        line,
        TrainParams::dkz32(),
        EnvConfig::default(),
        RewardWeights::default(),
        GuardConfig::default(),
    )
    .unwrap()
}

/// DKZ32 with every resistance switched off.
pub fn frictionless() -> TrainParams {
    let mut p = TrainParams::dkz32();
    p.davis = DavisCoefficients {
        d1: 0.0,
        d2: 0.0,
        d3: 0.0,
        units: DavisUnits::Specific,
    };
    for o in &mut p.oscillations {
        o.amplitude_mm = 0.0;
    }
    p
}

/// Frictionless and with an actuator that follows commands instantly.
pub fn ideal() -> TrainParams {
    let mut p = frictionless();
    p.traction.delay_s = 0.0;
    p.traction.time_constant_s = 0.0;
    p.braking.delay_s = 0.0;
    p.braking.time_constant_s = 0.0;
    p
}

pub fn rel_err(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs()
}
