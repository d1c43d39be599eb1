//! Longitudinal train dynamics.
//!
//! The train is a point mass `M (1 + η)` driven by the realized actuator
//! acceleration and retarded by gradient, running (Davis), curve and
//! inter-vehicle interaction forces:
//!
//! ```text
//! M (1 + η) a = M (1 + η) u_realized - F_g - F_r - F_c - F_d
//! ```
//!
//! The actuator turns commanded accelerations into realized ones through a
//! pure dead time followed by a first-order lag, with separate constants for
//! traction and braking.

use std::collections::VecDeque;
use std::ops::ControlFlow;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::line::{LineProfile, MIN_CURVE_RADIUS_M};

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("cannot read train parameter file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed train parameter file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid train parameters: {0}")]
    Invalid(String),
}

/// Units of the Davis coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DavisUnits {
    /// Specific resistance in N/kN with speed in km/h.
    #[default]
    Specific,
    /// Force in newtons with speed in m/s.
    Newtons,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DavisCoefficients {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    #[serde(default)]
    pub units: DavisUnits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OscillationForm {
    Sin,
    Cos,
}

/// Relative displacement `Δl_i(t) = amplitude · sin(t)` or `· cos(t)`, in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    pub amplitude_mm: f64,
    pub form: OscillationForm,
}

impl Oscillation {
    /// Second time derivative in m/s².
    pub fn acceleration_mps2(&self, t: f64) -> f64 {
        let d2 = match self.form {
            OscillationForm::Sin => -t.sin(),
            OscillationForm::Cos => -t.cos(),
        };
        self.amplitude_mm * 1e-3 * d2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// First-order lag time constant.
    pub time_constant_s: f64,
    /// Pure dead time.
    pub delay_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub static_mass_kg: f64,
    pub rotating_factor: f64,
    pub vehicle_masses_kg: Vec<f64>,
    pub davis: DavisCoefficients,
    /// `Δl_i` for i = 1..k; only the first k-1 enter the interaction force.
    #[serde(rename = "oscillation")]
    pub oscillations: Vec<Oscillation>,
    pub traction: ChannelParams,
    pub braking: ChannelParams,
    pub actuator_gain: f64,
    pub u_min_mps2: f64,
    pub gravity_mps2: f64,
}

impl TrainParams {
    /// DKZ32 six-car EMU.
    pub fn dkz32() -> Self {
        use OscillationForm::{Cos, Sin};
        let osc = |amplitude_mm, form| Oscillation { amplitude_mm, form };
        Self {
            static_mass_kg: 1.99e5,
            rotating_factor: 0.08,
            vehicle_masses_kg: vec![3.3e4, 3.5e4, 2.8e4, 3.5e4, 3.5e4, 3.3e4],
            davis: DavisCoefficients {
                d1: 1.244,
                d2: 1.45e-2,
                d3: 1.36e-4,
                units: DavisUnits::Specific,
            },
            oscillations: vec![
                osc(0.1, Sin),
                osc(0.15, Cos),
                osc(0.1, Sin),
                osc(0.15, Cos),
                osc(0.15, Cos),
                osc(0.1, Sin),
            ],
            traction: ChannelParams {
                time_constant_s: 0.4,
                delay_s: 1.0,
            },
            braking: ChannelParams {
                time_constant_s: 0.4,
                delay_s: 0.8,
            },
            actuator_gain: 1.0,
            u_min_mps2: -1.0,
            gravity_mps2: 9.8,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ParamsError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ParamsError> {
        let params: Self = toml::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("train parameters serialize")
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        let bad = |msg: String| Err(ParamsError::Invalid(msg));
        let total: f64 = self.vehicle_masses_kg.iter().sum();
        if self.vehicle_masses_kg.is_empty() {
            return bad("no vehicle masses".into());
        }
        if (total - self.static_mass_kg).abs() > 1e-6 * self.static_mass_kg.abs().max(1.0) {
            return bad(format!(
                "static mass {} kg differs from the sum of vehicle masses {} kg",
                self.static_mass_kg, total
            ));
        }
        if self.oscillations.len() + 1 < self.vehicle_masses_kg.len() {
            return bad(format!(
                "{} oscillation entries for {} vehicles; need at least {}",
                self.oscillations.len(),
                self.vehicle_masses_kg.len(),
                self.vehicle_masses_kg.len() - 1
            ));
        }
        for (name, ch) in [("traction", self.traction), ("braking", self.braking)] {
            if !(ch.time_constant_s >= 0.0 && ch.delay_s >= 0.0) {
                return bad(format!("{name} time constant and delay must be >= 0"));
            }
        }
        if !(self.rotating_factor >= 0.0) {
            return bad("rotating factor must be >= 0".into());
        }
        if !(self.actuator_gain > 0.0) {
            return bad("actuator gain must be > 0".into());
        }
        if !(self.u_min_mps2 < 0.0) {
            return bad("u_min must be negative".into());
        }
        if !(self.gravity_mps2 > 0.0) {
            return bad("gravity must be positive".into());
        }
        Ok(())
    }

    /// `M (1 + η)`.
    pub fn effective_mass_kg(&self) -> f64 {
        self.static_mass_kg * (1.0 + self.rotating_factor)
    }

    pub fn weight_kn(&self) -> f64 {
        self.static_mass_kg * self.gravity_mps2 / 1000.0
    }
}

impl Default for TrainParams {
    fn default() -> Self {
        Self::dkz32()
    }
}

pub fn gradient_force(params: &TrainParams, line: &LineProfile, s: f64) -> f64 {
    params.static_mass_kg * params.gravity_mps2 * line.sin_slope_clamped(s)
}

pub fn davis_force(params: &TrainParams, v: f64) -> f64 {
    let DavisCoefficients { d1, d2, d3, units } = params.davis;
    match units {
        DavisUnits::Specific => {
            let v_kmh = 3.6 * v;
            let w = d1 + d2 * v_kmh + d3 * v_kmh * v_kmh;
            w * params.weight_kn()
        }
        DavisUnits::Newtons => d1 + d2 * v + d3 * v * v,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("curve radius {0} m is not above 55 m")]
pub struct CurveDomainError(pub f64);

/// Curve resistance for an optional radius.
pub fn curve_force_for_radius(
    params: &TrainParams,
    radius_m: Option<f64>,
) -> Result<f64, CurveDomainError> {
    match radius_m {
        None => Ok(0.0),
        Some(r) if r <= MIN_CURVE_RADIUS_M => Err(CurveDomainError(r)),
        Some(r) => {
            let mass_t = params.static_mass_kg / 1000.0;
            let w = 6.3 * mass_t / (r - MIN_CURVE_RADIUS_M);
            Ok(w * params.weight_kn())
        }
    }
}

pub fn curve_force(params: &TrainParams, line: &LineProfile, s: f64) -> Result<f64, CurveDomainError> {
    curve_force_for_radius(params, line.curve_radius_clamped(s))
}

/// Sum over couplings i of `Δl̈_i(t) · Σ_{j>i} m_j`.
pub fn interaction_force(params: &TrainParams, t: f64) -> f64 {
    let masses = &params.vehicle_masses_kg;
    let k = masses.len();
    let mut behind: f64 = masses.iter().sum();
    let mut force = 0.0;
    for i in 0..k.saturating_sub(1) {
        behind -= masses[i];
        force += params.oscillations[i].acceleration_mps2(t) * behind;
    }
    force
}

/// Total retarding force at a given point and time.
pub fn resistance_force(params: &TrainParams, line: &LineProfile, s: f64, v: f64, t: f64) -> f64 {
    // Line validation rejects radii <= 55 m, so the curve term is total here.
    let curve = curve_force(params, line, s).unwrap_or(0.0);
    gradient_force(params, line, s) + davis_force(params, v) + curve + interaction_force(params, t)
}

/// Acceleration produced by an output force `f_out` after all resistances.
pub fn net_acceleration(
    params: &TrainParams,
    line: &LineProfile,
    s: f64,
    v: f64,
    t: f64,
    f_out: f64,
) -> f64 {
    (f_out - resistance_force(params, line, s, v, t)) / params.effective_mass_kg()
}

/// Output force that realizes a controlled acceleration `u`.
pub fn controlled_force(params: &TrainParams, u: f64) -> f64 {
    params.effective_mass_kg() * u
}

/// Which actuator channel a command drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Traction,
    Braking,
}

impl Regime {
    pub fn of(commanded: f64) -> Self {
        if commanded < 0.0 {
            Regime::Braking
        } else {
            Regime::Traction
        }
    }
}

/// Dead time plus first-order lag for one regime.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorChannel {
    queue: VecDeque<f64>,
    lag: f64,
    // Exact zero-order-hold factor 1 - exp(-h / T).
    alpha: f64,
}

impl ActuatorChannel {
    fn new(params: ChannelParams, substep_s: f64) -> Self {
        let len = (params.delay_s / substep_s - 1e-9).ceil().max(0.0) as usize;
        let alpha = if params.time_constant_s > 0.0 {
            1.0 - (-substep_s / params.time_constant_s).exp()
        } else {
            1.0
        };
        Self {
            queue: std::iter::repeat_n(0.0, len).collect(),
            lag: 0.0,
            alpha,
        }
    }

    fn step(&mut self, input: f64, gain: f64) -> f64 {
        let delayed = if self.queue.is_empty() {
            input
        } else {
            self.queue.push_back(input);
            self.queue.pop_front().unwrap_or(0.0)
        };
        self.lag += self.alpha * (gain * delayed - self.lag);
        self.lag
    }

    pub fn delay_len(&self) -> usize {
        self.queue.len()
    }

    pub fn output(&self) -> f64 {
        self.lag
    }

    fn reset(&mut self) {
        self.queue.iter_mut().for_each(|x| *x = 0.0);
        self.lag = 0.0;
    }
}

/// Actuator with independent traction and braking channels. Positive
/// commands feed the traction channel and negative ones the braking channel;
/// the realized acceleration is the sum of both outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorState {
    traction: ActuatorChannel,
    braking: ActuatorChannel,
    gain: f64,
}

impl ActuatorState {
    pub fn new(params: &TrainParams, substep_s: f64) -> Self {
        Self {
            traction: ActuatorChannel::new(params.traction, substep_s),
            braking: ActuatorChannel::new(params.braking, substep_s),
            gain: params.actuator_gain,
        }
    }

    /// Feeds one substep of `commanded` and returns the realized acceleration.
    pub fn step(&mut self, commanded: f64) -> f64 {
        let (push_traction, push_braking) = match Regime::of(commanded) {
            Regime::Traction => (commanded, 0.0),
            Regime::Braking => (0.0, commanded),
        };
        self.traction.step(push_traction, self.gain) + self.braking.step(push_braking, self.gain)
    }

    pub fn realized(&self) -> f64 {
        self.traction.output() + self.braking.output()
    }

    pub fn channel(&self, regime: Regime) -> &ActuatorChannel {
        match regime {
            Regime::Traction => &self.traction,
            Regime::Braking => &self.braking,
        }
    }

    pub fn reset(&mut self) {
        self.traction.reset();
        self.braking.reset();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainState {
    pub t_s: f64,
    pub s_m: f64,
    /// Never negative.
    pub v_mps: f64,
    /// Realized acceleration applied during the latest substep.
    pub u_actual: f64,
    pub u_commanded_prev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: TrainState,
    /// Per-mass energy `Σ |u| v h` over the substeps, left endpoint in both
    /// `u` and `v`.
    pub delta_ie: f64,
    /// `|u_end - u_start| / Δt`.
    pub jerk: f64,
}

/// Number of physics substeps in one control step.
pub fn substeps_per_step(dt_s: f64, substep_s: f64) -> usize {
    let n = (dt_s / substep_s).round();
    assert!(
        n >= 1.0 && (n * substep_s - dt_s).abs() <= 1e-9 * dt_s.max(1.0),
        "control step {dt_s} s is not an integer multiple of substep {substep_s} s"
    );
    n as usize
}

/// Advances the train by one control step holding `commanded` constant.
pub fn integrate_control_step(
    state: &TrainState,
    actuator: &mut ActuatorState,
    params: &TrainParams,
    line: &LineProfile,
    commanded: f64,
    dt_s: f64,
    substep_s: f64,
) -> StepOutcome {
    let flow = integrate_control_step_observed(
        state,
        actuator,
        params,
        line,
        commanded,
        dt_s,
        substep_s,
        |_| ControlFlow::<()>::Continue(()),
    );
    match flow {
        ControlFlow::Continue(outcome) => outcome,
        ControlFlow::Break(()) => unreachable!(),
    }
}

/// [`integrate_control_step`] that hands every intermediate substep state
/// to `inspect`, which may stop the integration early.
#[allow(clippy::too_many_arguments)]
pub fn integrate_control_step_observed<B>(
    state: &TrainState,
    actuator: &mut ActuatorState,
    params: &TrainParams,
    line: &LineProfile,
    commanded: f64,
    dt_s: f64,
    substep_s: f64,
    mut inspect: impl FnMut(&TrainState) -> ControlFlow<B>,
) -> ControlFlow<B, StepOutcome> {
    let n = substeps_per_step(dt_s, substep_s);
    let h = substep_s;
    let m_eff = params.effective_mass_kg();
    let u_start = state.u_actual;
    let mut st = *state;
    let mut energy = 0.0;
    for k in 0..n {
        let t = state.t_s + k as f64 * h;
        energy += st.u_actual.abs() * st.v_mps * h;
        let u = actuator.step(commanded);
        let resist = resistance_force(params, line, st.s_m, st.v_mps, t);
        let a = u - resist / m_eff;
        let v_new = (st.v_mps + a * h).max(0.0);
        st.s_m += 0.5 * (st.v_mps + v_new) * h;
        st.v_mps = v_new;
        st.u_actual = u;
        st.t_s = if k + 1 == n { state.t_s + dt_s } else { t + h };
        inspect(&st)?;
    }
    st.u_commanded_prev = commanded;
    ControlFlow::Continue(StepOutcome {
        state: st,
        delta_ie: energy,
        jerk: (st.u_actual - u_start).abs() / dt_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::line::TrackSection;

    fn flat(length: f64) -> LineProfile {
        LineProfile::new(vec![TrackSection::new(0.0, length, 30.0, 0.0, None)], length, 100.0)
            .unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn dkz32_masses_sum_to_static_mass() {
        let p = TrainParams::dkz32();
        assert!(p.validate().is_ok());
        assert_eq!(p.vehicle_masses_kg.iter().sum::<f64>(), 1.99e5);
    }

    #[test]
    fn mass_mismatch_rejected() {
        let mut p = TrainParams::dkz32();
        p.static_mass_kg = 2.0e5;
        assert!(matches!(p.validate(), Err(ParamsError::Invalid(_))));
    }

    #[test]
    fn params_file_round_trip() {
        let p = TrainParams::dkz32();
        let back = TrainParams::from_toml_str(&p.to_toml_string()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn grade_force_sign() {
        let p = TrainParams::dkz32();
        let up = LineProfile::new(vec![TrackSection::new(0.0, 10.0, 20.0, 2.0, None)], 10.0, 1.0)
            .unwrap();
        let down =
            LineProfile::new(vec![TrackSection::new(0.0, 10.0, 20.0, -2.0, None)], 10.0, 1.0)
                .unwrap();
        let oracle = 1.99e5 * 9.8 * (0.002f64).atan().sin();
        assert!(rel(gradient_force(&p, &up, 5.0), oracle) < 1e-12);
        assert!(rel(gradient_force(&p, &down, 5.0), -oracle) < 1e-12);
        assert_eq!(gradient_force(&p, &flat(10.0), 5.0), 0.0);
    }

    #[test]
    fn davis_is_increasing_and_newton_mode_is_raw() {
        let mut p = TrainParams::dkz32();
        let mut prev = davis_force(&p, 0.0);
        for i in 1..100 {
            let f = davis_force(&p, i as f64 * 0.3);
            assert!(f > prev);
            prev = f;
        }
        p.davis.units = DavisUnits::Newtons;
        assert_eq!(davis_force(&p, 2.0), 1.244 + 1.45e-2 * 2.0 + 1.36e-4 * 4.0);
    }

    #[test]
    fn curve_force_decreases_with_radius_and_rejects_singular_radius() {
        let p = TrainParams::dkz32();
        let a = curve_force_for_radius(&p, Some(300.0)).unwrap();
        let b = curve_force_for_radius(&p, Some(600.0)).unwrap();
        assert!(a > b && b > 0.0);
        assert_eq!(curve_force_for_radius(&p, None).unwrap(), 0.0);
        assert!(curve_force_for_radius(&p, Some(55.0)).is_err());
    }

    #[test]
    fn interaction_force_zero_without_oscillation_and_bounded() {
        let mut p = TrainParams::dkz32();
        let bound: f64 = {
            let m = &p.vehicle_masses_kg;
            (0..m.len() - 1)
                .map(|i| p.oscillations[i].amplitude_mm * 1e-3 * m[i + 1..].iter().sum::<f64>())
                .sum()
        };
        for k in 0..200 {
            let t = k as f64 * 0.173;
            assert!(interaction_force(&p, t).abs() <= bound + 1e-12);
        }
        p.oscillations.iter_mut().for_each(|o| o.amplitude_mm = 0.0);
        assert_eq!(interaction_force(&p, 1.3), 0.0);
    }

    #[test]
    fn rotating_factor_scales_acceleration() {
        let line = flat(100.0);
        let mut p = TrainParams::dkz32();
        p.rotating_factor = 0.1;
        let f = 5_000.0;
        let a1 = net_acceleration(&p, &line, 1.0, 3.0, 0.5, f);
        p.rotating_factor = 0.2;
        let a2 = net_acceleration(&p, &line, 1.0, 3.0, 0.5, f);
        assert!(rel(a2 / a1, 1.1 / 1.2) < 1e-12);
    }

    #[test]
    fn force_balance_gives_zero_acceleration() {
        let line = flat(100.0);
        let p = TrainParams::dkz32();
        let f = resistance_force(&p, &line, 20.0, 12.0, 3.0);
        assert!(net_acceleration(&p, &line, 20.0, 12.0, 3.0, f).abs() < 1e-15);
    }

    #[test]
    fn braking_channel_has_shorter_dead_time() {
        let p = TrainParams::dkz32();
        let act = ActuatorState::new(&p, 0.1);
        assert_eq!(act.channel(Regime::Traction).delay_len(), 10);
        assert_eq!(act.channel(Regime::Braking).delay_len(), 8);
    }

    #[test]
    fn zero_command_decays_geometrically() {
        let p = TrainParams::dkz32();
        let mut act = ActuatorState::new(&p, 0.1);
        for _ in 0..30 {
            act.step(1.0);
        }
        for _ in 0..15 {
            act.step(0.0);
        }
        let mut prev = act.realized();
        for _ in 0..20 {
            let u = act.step(0.0);
            assert!(u < prev && u > 0.0);
            assert!((u / prev - (-0.25f64).exp()).abs() < 1e-12);
            prev = u;
        }
    }

    #[test]
    fn train_at_rest_stays_at_rest() {
        let p = TrainParams::dkz32();
        let line = flat(1000.0);
        let mut act = ActuatorState::new(&p, 0.1);
        let st = TrainState::default();
        let out = integrate_control_step(&st, &mut act, &p, &line, 0.0, 1.0, 0.1);
        assert_eq!(out.state.v_mps, 0.0);
        assert_eq!(out.state.s_m, 0.0);
        assert_eq!(out.delta_ie, 0.0);
        assert_eq!(out.state.t_s, 1.0);
    }

    #[test]
    fn observed_integration_matches_plain() {
        let p = TrainParams::dkz32();
        let line = flat(1000.0);
        let mut a1 = ActuatorState::new(&p, 0.1);
        let mut a2 = a1.clone();
        let mut s1 = TrainState::default();
        let mut s2 = s1;
        for k in 0..20 {
            let u = if k < 10 { 0.8 } else { -0.3 };
            s1 = integrate_control_step(&s1, &mut a1, &p, &line, u, 1.0, 0.1).state;
            let mut seen = 0;
            let flow = integrate_control_step_observed(&s2, &mut a2, &p, &line, u, 1.0, 0.1, |_| {
                seen += 1;
                ControlFlow::<()>::Continue(())
            });
            s2 = match flow {
                ControlFlow::Continue(o) => o.state,
                ControlFlow::Break(()) => unreachable!(),
            };
            assert_eq!(seen, 10);
            assert_eq!(s1, s2);
        }
        assert_eq!(a1, a2);
    }
}
