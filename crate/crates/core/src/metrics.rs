//! Trajectories and the safety, punctuality, energy and comfort indices.
//!
//! A [`Trajectory`] holds one record per control step, taken at the start
//! of the step, followed by one terminal record (arrival or cutoff) that
//! has no step data. Energy is summed over step records only; comfort and
//! safety also see the terminal record.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guard::RuleFired;
use crate::line::LineProfile;

/// Jerk above which the comfort index accumulates, m/s³.
pub const COMFORT_THRESHOLD: f64 = 0.30;

/// Largest running-time error still counted as punctual, s.
pub const PUNCTUALITY_TOLERANCE_S: f64 = 3.0;

const ARRIVAL_TOL_M: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trajectory never reached the destination at {destination_m} m (last position {last_s_m} m)")]
    DestinationNotReached { destination_m: f64, last_s_m: f64 },
    #[error("trajectory is empty")]
    Empty,
    #[error("trajectory csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trajectory io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trajectory csv row {row}: {message}")]
    Row { row: usize, message: String },
}

/// Data for the control step that starts at a record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepData {
    /// Executed (post-guard) command.
    pub u_cmd: f64,
    pub delta_ie: f64,
    pub jerk: f64,
    pub rule_fired: RuleFired,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub t_s: f64,
    pub s_m: f64,
    pub v_mps: f64,
    /// Realized acceleration at `t_s`.
    pub u_actual: f64,
    /// `None` on the terminal record.
    pub step: Option<StepData>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub dt_s: f64,
    pub planning_trip_time_s: f64,
}

impl Trajectory {
    pub fn new(dt_s: f64, planning_trip_time_s: f64) -> Self {
        Self {
            records: Vec::new(),
            dt_s,
            planning_trip_time_s,
        }
    }

    pub fn step_records(&self) -> impl Iterator<Item = (&TrajectoryRecord, &StepData)> {
        self.records
            .iter()
            .filter_map(|r| r.step.as_ref().map(|s| (r, s)))
    }

    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    pub fn arrived(&self, destination_m: f64) -> bool {
        self.last()
            .is_some_and(|r| r.s_m >= destination_m - ARRIVAL_TOL_M)
    }

    /// Time of the terminal record when it lies at the destination.
    pub fn arrival_time_s(&self, destination_m: f64) -> Result<f64, MetricsError> {
        let last = self.last().ok_or(MetricsError::Empty)?;
        if self.arrived(destination_m) {
            Ok(last.t_s)
        } else {
            Err(MetricsError::DestinationNotReached {
                destination_m,
                last_s_m: last.s_m,
            })
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.records.iter().map(|r| r.v_mps).fold(0.0, f64::max)
    }

    /// `(s_m, v_mps)` pairs for speed-distance plots.
    pub fn speed_distance(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.s_m, r.v_mps)).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(CsvRow::from(r))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a trajectory written by [`Trajectory::write_csv`]. The control
    /// step is inferred from the first two step records, falling back to
    /// `default_dt_s`.
    pub fn read_csv<R: Read>(
        reader: R,
        default_dt_s: f64,
        planning_trip_time_s: f64,
    ) -> Result<Self, MetricsError> {
        let mut rd = csv::Reader::from_reader(reader);
        let mut records = Vec::new();
        for (i, row) in rd.deserialize::<CsvRow>().enumerate() {
            let row = row?;
            records.push(row.into_record(i + 2)?);
        }
        let mut steps = records.iter().filter(|r| r.step.is_some());
        let dt_s = match (steps.next(), steps.next()) {
            (Some(a), Some(b)) => b.t_s - a.t_s,
            _ => default_dt_s,
        };
        Ok(Self {
            records,
            dt_s,
            planning_trip_time_s,
        })
    }

    pub fn load_csv(
        path: impl AsRef<Path>,
        default_dt_s: f64,
        planning_trip_time_s: f64,
    ) -> Result<Self, MetricsError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), default_dt_s, planning_trip_time_s)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    t_s: f64,
    s_m: f64,
    v_mps: f64,
    u_cmd: Option<f64>,
    u_actual: f64,
    #[serde(rename = "delta_Ie")]
    delta_ie: Option<f64>,
    jerk: Option<f64>,
    rule_fired: String,
}

impl From<&TrajectoryRecord> for CsvRow {
    fn from(r: &TrajectoryRecord) -> Self {
        Self {
            t_s: r.t_s,
            s_m: r.s_m,
            v_mps: r.v_mps,
            u_cmd: r.step.map(|s| s.u_cmd),
            u_actual: r.u_actual,
            delta_ie: r.step.map(|s| s.delta_ie),
            jerk: r.step.map(|s| s.jerk),
            rule_fired: r
                .step
                .map_or(String::new(), |s| s.rule_fired.as_str().to_string()),
        }
    }
}

impl CsvRow {
    fn into_record(self, row: usize) -> Result<TrajectoryRecord, MetricsError> {
        let step = match (self.u_cmd, self.delta_ie, self.jerk) {
            (Some(u_cmd), Some(delta_ie), Some(jerk)) => {
                let rule_fired = self.rule_fired.parse().map_err(|message| MetricsError::Row {
                    row,
                    message,
                })?;
                Some(StepData {
                    u_cmd,
                    delta_ie,
                    jerk,
                    rule_fired,
                })
            }
            (None, None, None) => None,
            _ => {
                return Err(MetricsError::Row {
                    row,
                    message: "u_cmd, delta_Ie and jerk must be all present or all empty".into(),
                })
            }
        };
        Ok(TrajectoryRecord {
            t_s: self.t_s,
            s_m: self.s_m,
            v_mps: self.v_mps,
            u_actual: self.u_actual,
            step,
        })
    }
}

/// 1 when no record exceeds the speed limit at its position.
pub fn safety_index(traj: &Trajectory, line: &LineProfile) -> u8 {
    let ok = traj.records.iter().all(|r| {
        let s = r.s_m.clamp(0.0, line.total_length_m());
        r.v_mps <= line.speed_limit_clamped(s)
    });
    u8::from(ok)
}

pub fn punctuality_from_times(actual_s: f64, planning_s: f64) -> (u8, f64) {
    let error = (actual_s - planning_s).abs();
    (u8::from(error <= PUNCTUALITY_TOLERANCE_S), error)
}

/// `(I_t, e_t)`.
pub fn punctuality_index(traj: &Trajectory, line: &LineProfile) -> Result<(u8, f64), MetricsError> {
    let actual = traj.arrival_time_s(line.destination_m())?;
    Ok(punctuality_from_times(actual, traj.planning_trip_time_s))
}

/// `Σ |u_i| v_i Δt` over the step records.
pub fn energy_index(traj: &Trajectory, dt_s: f64) -> f64 {
    traj.step_records()
        .map(|(r, _)| r.u_actual.abs() * r.v_mps * dt_s)
        .sum()
}

/// The part of a jerk that counts toward the comfort index.
pub fn comfort_excess(jerk: f64, threshold: f64) -> f64 {
    if jerk > threshold {
        jerk
    } else {
        0.0
    }
}

/// Sum of jerks above `threshold` between consecutive records.
pub fn comfort_index(traj: &Trajectory, dt_s: f64, threshold: f64) -> f64 {
    traj.records
        .windows(2)
        .map(|w| comfort_excess(((w[1].u_actual - w[0].u_actual) / dt_s).abs(), threshold))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub safety: u8,
    pub punctuality: u8,
    pub time_error_s: f64,
    pub energy: f64,
    pub comfort: f64,
    pub actual_time_s: f64,
}

impl EvaluationReport {
    pub fn to_row(&self, model: &str, trip_time_s: f64) -> ComparisonRow {
        ComparisonRow {
            model: model.to_string(),
            trip_time_s,
            t: self.actual_time_s,
            i_t: self.punctuality,
            i_s: self.safety,
            i_e: self.energy,
            i_c: self.comfort,
        }
    }
}

impl std::fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "t = {:.0} s ({:.2} s), I_t = {}, I_s = {}, I_e = {:.2}, I_c = {:.2}, e_t = {:.2} s",
            self.actual_time_s.round(),
            self.actual_time_s,
            self.punctuality,
            self.safety,
            self.energy,
            self.comfort,
            self.time_error_s
        )
    }
}

pub fn evaluate(traj: &Trajectory, line: &LineProfile) -> Result<EvaluationReport, MetricsError> {
    if traj.records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let actual_time_s = traj.arrival_time_s(line.destination_m())?;
    let (punctuality, time_error_s) =
        punctuality_from_times(actual_time_s, traj.planning_trip_time_s);
    Ok(EvaluationReport {
        safety: safety_index(traj, line),
        punctuality,
        time_error_s,
        energy: energy_index(traj, traj.dt_s),
        comfort: comfort_index(traj, traj.dt_s, COMFORT_THRESHOLD),
        actual_time_s,
    })
}

/// One row of a model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub trip_time_s: f64,
    pub t: f64,
    #[serde(rename = "I_t")]
    pub i_t: u8,
    #[serde(rename = "I_s")]
    pub i_s: u8,
    #[serde(rename = "I_e")]
    pub i_e: f64,
    #[serde(rename = "I_c")]
    pub i_c: f64,
}

/// Orders rows by trip time, then model name.
pub fn sort_rows(rows: &mut [ComparisonRow]) {
    rows.sort_by(|a, b| {
        a.trip_time_s
            .total_cmp(&b.trip_time_s)
            .then_with(|| a.model.cmp(&b.model))
    });
}

pub fn read_rows<R: Read>(reader: R) -> Result<Vec<ComparisonRow>, MetricsError> {
    let mut rd = csv::Reader::from_reader(reader);
    Ok(rd.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_rows<W: Write>(writer: W, rows: &[ComparisonRow]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends rows to a comparison CSV, writing the header for a new file.
pub fn append_rows(path: impl AsRef<Path>, rows: &[ComparisonRow]) -> Result<(), MetricsError> {
    let path = path.as_ref();
    let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(!exists)
        .from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width text rendering with the columns `t, I_t, I_s, I_e, I_c`.
pub fn format_table(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "{:<width$}  {:>9}  {:>5}  {:>3}  {:>3}  {:>9}  {:>7}\n",
        "model", "trip_time", "t", "I_t", "I_s", "I_e", "I_c"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>9.0}  {:>5.0}  {:>3}  {:>3}  {:>9.2}  {:>7.2}\n",
            r.model, r.trip_time_s, r.t, r.i_t, r.i_s, r.i_e, r.i_c
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::line::TrackSection;

    fn record(t: f64, s: f64, v: f64, u: f64) -> TrajectoryRecord {
        TrajectoryRecord {
            t_s: t,
            s_m: s,
            v_mps: v,
            u_actual: u,
            step: Some(StepData {
                u_cmd: u,
                delta_ie: 0.0,
                jerk: 0.0,
                rule_fired: RuleFired::None,
            }),
        }
    }

    fn traj(us: &[f64], vs: &[f64]) -> Trajectory {
        let mut t = Trajectory::new(1.0, 101.0);
        let mut s = 0.0;
        for (i, (&u, &v)) in us.iter().zip(vs).enumerate() {
            t.records.push(record(i as f64, s, v, u));
            s += v;
        }
        t
    }

    fn line(limit: f64) -> LineProfile {
        LineProfile::new(vec![TrackSection::new(0.0, 1000.0, limit, 0.0, None)], 1000.0, 101.0)
            .unwrap()
    }

    #[test]
    fn energy_hand_sum() {
        let t = traj(&[1.0, 1.0, 0.0], &[0.0, 1.0, 2.0]);
        assert_eq!(energy_index(&t, 1.0), 1.0);
        let coasting = traj(&[0.0; 4], &[3.0; 4]);
        assert_eq!(energy_index(&coasting, 1.0), 0.0);
    }

    #[test]
    fn energy_is_bilinear() {
        let us = [0.3, -0.7, 0.2, 1.0];
        let vs = [1.0, 4.0, 2.5, 6.0];
        let base = energy_index(&traj(&us, &vs), 1.0);
        let c = 2.5;
        let scaled_u: Vec<f64> = us.iter().map(|u| u * c).collect();
        let scaled_v: Vec<f64> = vs.iter().map(|v| v * c).collect();
        let scaled = energy_index(&traj(&scaled_u, &scaled_v), 1.0);
        assert!((scaled - c * c * base).abs() < 1e-12);
    }

    #[test]
    fn comfort_hand_evaluation() {
        let v = [1.0; 3];
        assert_eq!(comfort_index(&traj(&[0.0, 0.4, 0.4], &v), 1.0, 0.30), 0.4);
        assert_eq!(comfort_index(&traj(&[0.0, 0.2, 0.4], &v), 1.0, 0.30), 0.0);
        assert_eq!(comfort_index(&traj(&[0.5; 3], &v), 1.0, 0.30), 0.0);
        assert_eq!(comfort_index(&traj(&[0.5], &[1.0]), 1.0, 0.30), 0.0);
    }

    #[test]
    fn safety_is_inclusive() {
        let l = line(20.0);
        assert_eq!(safety_index(&traj(&[0.0; 3], &[10.0; 3]), &l), 1);
        assert_eq!(safety_index(&traj(&[0.0; 2], &[10.0, 20.0]), &l), 1);
        assert_eq!(safety_index(&traj(&[0.0; 2], &[10.0, 20.01]), &l), 0);
    }

    #[test]
    fn punctuality_boundaries() {
        assert_eq!(punctuality_from_times(102.0, 101.0), (1, 1.0));
        assert_eq!(punctuality_from_times(104.0, 101.0), (1, 3.0));
        assert_eq!(punctuality_from_times(104.5, 101.0).0, 0);
    }

    #[test]
    fn not_reaching_destination_is_an_error() {
        let l = line(20.0);
        let t = traj(&[0.0; 3], &[1.0; 3]);
        assert!(matches!(
            punctuality_index(&t, &l),
            Err(MetricsError::DestinationNotReached { .. })
        ));
        assert!(evaluate(&t, &l).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_evaluation() {
        let l = line(20.0);
        let mut t = traj(&[0.6, 0.2, -0.5], &[0.0, 5.0, 9.0]);
        t.records.push(TrajectoryRecord {
            t_s: 2.7,
            s_m: 1000.0,
            v_mps: 3.0,
            u_actual: -0.9,
            step: None,
        });
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_s,s_m,v_mps,u_cmd,u_actual,delta_Ie,jerk,rule_fired\n"));
        let back = Trajectory::read_csv(&buf[..], 1.0, 101.0).unwrap();
        assert_eq!(back, t);
        assert_eq!(evaluate(&back, &l).unwrap(), evaluate(&t, &l).unwrap());
    }

    #[test]
    fn table_rows_sort_and_render() {
        let rep = EvaluationReport {
            safety: 1,
            punctuality: 1,
            time_error_s: 1.0,
            energy: 500.0,
            comfort: 4.5,
            actual_time_s: 102.0,
        };
        let mut rows = vec![
            rep.to_row("stod", 115.0),
            rep.to_row("manual", 101.0),
            rep.to_row("ston", 101.0),
            rep.to_row("itor", 95.0),
        ];
        sort_rows(&mut rows);
        let order: Vec<_> = rows.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(order, ["itor", "manual", "ston", "stod"]);
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("model,trip_time_s,t,I_t,I_s,I_e,I_c\n"));
        assert_eq!(read_rows(&buf[..]).unwrap(), rows);
        assert_eq!(format_table(&rows).lines().count(), 5);
    }
}
