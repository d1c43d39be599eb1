mod common;

use common::{flat_line, frictionless, rel_err};
use sto_core::dynamics::*;
use sto_core::line::{LineProfile, TrackSection};

const M: f64 = 1.99e5;
const G: f64 = 9.8;

fn graded(grade_permille: f64) -> LineProfile {
    LineProfile::new(vec![TrackSection::new(0.0, 500.0, 20.0, grade_permille, None)], 500.0, 60.0).unwrap()
}

#[test]
fn gradient_force_matches_hand_arithmetic() {
    let p = TrainParams::dkz32();
    let expected = M * G * (0.002f64).atan().sin();
    let up = gradient_force(&p, &graded(2.0), 10.0);
    let down = gradient_force(&p, &graded(-2.0), 10.0);
    assert!(rel_err(up, expected) < 1e-9, "{up} vs {expected}");
    assert!(rel_err(down, -expected) < 1e-9);
    assert!((up - 3.90e3).abs() < 10.0);
}

#[test]
fn davis_force_matches_hand_arithmetic() {
    let p = TrainParams::dkz32();
    let weight_kn = M * G / 1000.0;
    assert!(rel_err(davis_force(&p, 0.0), 1.244 * weight_kn) < 1e-9);
    assert!((davis_force(&p, 0.0) - 2.426e3).abs() < 1.0);

    let v = 18.86;
    let kmh = v * 3.6;
    let w = 1.244 + 1.45e-2 * kmh + 1.36e-4 * kmh * kmh;
    assert!(rel_err(davis_force(&p, v), w * weight_kn) < 1e-9);
    assert!((w - 2.856).abs() < 1e-3);
}

#[test]
fn curve_force_matches_hand_arithmetic() {
    let p = TrainParams::dkz32();
    let expected = 6.3 * 199.0 / 300.0 * M * G / 1000.0;
    let f = curve_force_for_radius(&p, Some(355.0)).unwrap();
    assert!(rel_err(f, expected) < 1e-9);
    assert!((f - 8.15e3).abs() < 10.0);
    assert_eq!(curve_force_for_radius(&p, None).unwrap(), 0.0);
    assert!(curve_force_for_radius(&p, Some(55.0)).is_err());
}

#[test]
fn interaction_force_matches_expanded_sum() {
    let p = TrainParams::dkz32();
    assert!(rel_err(interaction_force(&p, 0.0), -34.8) < 1e-9);

    // Full double sum at a generic time.
    let t: f64 = 0.7;
    let a = |amp_mm: f64, cos: bool| -amp_mm * 1e-3 * if cos { t.cos() } else { t.sin() };
    let expected = a(0.1, false) * 1.66e5
        + a(0.15, true) * 1.31e5
        + a(0.1, false) * 1.03e5
        + a(0.15, true) * 6.8e4
        + a(0.15, true) * 3.3e4;
    assert!(rel_err(interaction_force(&p, t), expected) < 1e-9);
}

#[test]
fn net_acceleration_composes_the_forces() {
    let mut p = TrainParams::dkz32();
    for o in &mut p.oscillations {
        o.amplitude_mm = 0.0;
    }
    let line = flat_line(500.0, 20.0);
    let u = net_acceleration(&p, &line, 0.0, 0.0, 0.0, 0.0);
    let expected = -davis_force(&p, 0.0) / (M * 1.08);
    assert!(rel_err(u, expected) < 1e-9);
    assert!((u + 0.0113).abs() < 1e-4);

    // Output force exactly cancelling resistance gives zero acceleration.
    let line = graded(3.0);
    let full = TrainParams::dkz32();
    let f = resistance_force(&full, &line, 100.0, 12.0, 3.0);
    assert!(net_acceleration(&full, &line, 100.0, 12.0, 3.0, f).abs() < 1e-12);
    assert!(rel_err(controlled_force(&full, 0.5), 0.5 * M * 1.08) < 1e-12);
}

#[test]
fn resistance_sums_the_four_components() {
    let p = TrainParams::dkz32();
    let line = LineProfile::new(
        vec![TrackSection::new(0.0, 500.0, 20.0, -4.0, Some(400.0))],
        500.0,
        60.0,
    )
    .unwrap();
    let (s, v, t) = (250.0, 14.0, 12.3);
    let expected = gradient_force(&p, &line, s)
        + davis_force(&p, v)
        + curve_force(&p, &line, s).unwrap()
        + interaction_force(&p, t);
    assert!(rel_err(resistance_force(&p, &line, s, v, t), expected) < 1e-12);
    assert!(frictionless().validate().is_ok());
}
