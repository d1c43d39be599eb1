mod common;

use common::env_for;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sto_core::env::rollout;
use sto_core::guard::*;
use sto_core::line::{random_line, LineProfile, RandomLineSpec, TrackSection};
use sto_core::metrics::safety_index;

fn drop_line() -> LineProfile {
    LineProfile::new(
        vec![
            TrackSection::new(0.0, 100.0, 25.0, 0.0, None),
            TrackSection::new(100.0, 400.0, 15.0, 0.0, None),
        ],
        400.0,
        60.0,
    )
    .unwrap()
}

#[test]
fn safe_velocity_closed_form() {
    let cfg = GuardConfig { beta: 1.0, ..Default::default() };
    let v = safe_velocity(&drop_line(), 50.0, &cfg).unwrap();
    assert!((v - 325f64.sqrt()).abs() < 1e-12);
    assert!((v - 18.028).abs() < 1e-3);

    let at_boundary = safe_velocity(&drop_line(), 100.0 - 1e-12, &GuardConfig::default()).unwrap();
    assert!((at_boundary - 0.95f64.sqrt() * 15.0).abs() < 1e-9);
    assert!(safe_velocity(&drop_line(), 200.0, &cfg).is_none());
}

proptest! {
    #[test]
    fn safe_velocity_decreases_toward_the_drop(a in 0.0f64..99.0, b in 0.0f64..99.0) {
        let cfg = GuardConfig::default();
        let (near, far) = if a > b { (a, b) } else { (b, a) };
        let line = drop_line();
        prop_assert!(safe_velocity(&line, near, &cfg).unwrap() <= safe_velocity(&line, far, &cfg).unwrap());
    }

    #[test]
    fn coast_band_is_inclusive(u in -1.0f64..1.0) {
        let cfg = GuardConfig::default();
        let state = classify_state(u, &cfg);
        if u.abs() <= cfg.coast_band {
            prop_assert_eq!(state, DrivingState::Coasting);
        } else {
            prop_assert_ne!(state, DrivingState::Coasting);
        }
    }

    #[test]
    fn guarded_random_policies_stay_safe(line_seed in any::<u64>(), policy_seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(line_seed);
        let line = random_line(&mut rng, &RandomLineSpec::default());
        let mut env = env_for(line.clone());
        let mut policy_rng = ChaCha8Rng::seed_from_u64(policy_seed);
        let (traj, _) = rollout(&mut env, |_, _| policy_rng.gen_range(-1.0..=1.0)).unwrap();
        prop_assert_eq!(safety_index(&traj, &line), 1);

        let cfg = GuardConfig::default();
        let mut prev = 0.0;
        for (rec, step) in traj.step_records() {
            prop_assert!(!is_direct_transition(classify_state(prev, &cfg), classify_state(step.u_cmd, &cfg)));
            if rec.v_mps < cfg.start_speed_threshold {
                prop_assert!(step.u_cmd <= cfg.start_accel_cap);
            }
            prev = step.u_cmd;
        }
    }
}

#[test]
fn action_levels_are_symmetric_and_exact() {
    let levels = action_levels(11);
    assert_eq!(levels.len(), 11);
    assert_eq!(levels[0], -1.0);
    assert_eq!(levels[5], 0.0);
    assert_eq!(levels[10], 1.0);
    assert_eq!(levels[7], 0.4);
}

#[test]
fn rule_names_round_trip() {
    for rule in [
        RuleFired::None,
        RuleFired::NoDirectTransition,
        RuleFired::StartCap,
        RuleFired::SafeVelocityBrake,
        RuleFired::CurrentLimitClamp,
    ] {
        assert_eq!(rule.as_str().parse::<RuleFired>().unwrap(), rule);
    }
}
