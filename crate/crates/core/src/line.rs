//! Sectioned track descriptions: speed limits, gradients and curves.
//!
//! A [`LineProfile`] is an ordered, contiguous list of [`TrackSection`]s
//! covering `[0, total_length_m]`. Sections are half-open intervals
//! `[start_m, end_m)`, except the last one which also contains its end point.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Curve resistance is singular at this radius.
pub const MIN_CURVE_RADIUS_M: f64 = 55.0;

const BOUNDARY_TOL_M: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LineError {
    #[error("cannot read line file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed line file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid line: {0}")]
    Invalid(#[from] Violation),
    #[error("position {s} m is outside the line [0, {length}] m")]
    OutOfRange { s: f64, length: f64 },
}

/// The first invariant a line description breaks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("line has no sections")]
    Empty,
    #[error("section {index}: non-finite value")]
    NonFinite { index: usize },
    #[error("first section starts at {start} m, expected 0")]
    FirstStart { start: f64 },
    #[error("section {index}: end {end} m is not after start {start} m")]
    EmptySection { index: usize, start: f64, end: f64 },
    #[error("gap between sections at {at} m (next section starts at {next_start} m)")]
    Gap { at: f64, next_start: f64 },
    #[error("sections overlap at {at} m (next section starts at {next_start} m)")]
    Overlap { at: f64, next_start: f64 },
    #[error("section {index}: speed limit {limit} m/s must be positive")]
    NonPositiveLimit { index: usize, limit: f64 },
    #[error("section {index}: curve radius {radius} m must exceed 55 m")]
    CurveRadius { index: usize, radius: f64 },
    #[error("last section ends at {end} m but total length is {total} m")]
    LengthMismatch { end: f64, total: f64 },
    #[error("planning trip time {0} s must be positive")]
    TripTime(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackSection {
    pub start_m: f64,
    pub end_m: f64,
    pub speed_limit_mps: f64,
    /// Positive uphill.
    pub slope_angle_rad: f64,
    /// `None` on straight track.
    pub curve_radius_m: Option<f64>,
}

impl TrackSection {
    pub fn new(
        start_m: f64,
        end_m: f64,
        speed_limit_mps: f64,
        grade_permille: f64,
        curve_radius_m: Option<f64>,
    ) -> Self {
        Self {
            start_m,
            end_m,
            speed_limit_mps,
            slope_angle_rad: grade_to_angle(grade_permille),
            curve_radius_m,
        }
    }

    pub fn length_m(&self) -> f64 {
        self.end_m - self.start_m
    }

    pub fn grade_permille(&self) -> f64 {
        self.slope_angle_rad.tan() * 1000.0
    }
}

pub fn grade_to_angle(grade_permille: f64) -> f64 {
    (grade_permille / 1000.0).atan()
}

/// An immutable, validated track description.
#[derive(Debug, Clone, PartialEq)]
pub struct LineProfile {
    name: String,
    approximate: bool,
    sections: Vec<TrackSection>,
    total_length_m: f64,
    planning_trip_time_s: f64,
    // Derived lookup tables.
    sin_slope: Vec<f64>,
    next_drop: Vec<Option<usize>>,
    min_limit_from: Vec<f64>,
}

impl LineProfile {
    pub fn new(
        sections: Vec<TrackSection>,
        total_length_m: f64,
        planning_trip_time_s: f64,
    ) -> Result<Self, Violation> {
        validate(&sections, total_length_m, planning_trip_time_s)?;
        let sin_slope = sections.iter().map(|s| s.slope_angle_rad.sin()).collect();

        let n = sections.len();
        let mut next_drop = vec![None; n];
        for i in 0..n {
            let limit = sections[i].speed_limit_mps;
            next_drop[i] = (i + 1..n).find(|&j| sections[j].speed_limit_mps < limit);
        }
        let mut min_limit_from = vec![f64::INFINITY; n];
        let mut running = f64::INFINITY;
        for i in (0..n).rev() {
            running = running.min(sections[i].speed_limit_mps);
            min_limit_from[i] = running;
        }

        Ok(Self {
            name: String::new(),
            approximate: false,
            sections,
            total_length_m,
            planning_trip_time_s,
            sin_slope,
            next_drop,
            min_limit_from,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_approximate(mut self, approximate: bool) -> Self {
        self.approximate = approximate;
        self
    }

    /// Same track with a different planning trip time.
    pub fn with_planning_trip_time(mut self, trip_time_s: f64) -> Result<Self, Violation> {
        if !(trip_time_s > 0.0) || !trip_time_s.is_finite() {
            return Err(Violation::TripTime(trip_time_s));
        }
        self.planning_trip_time_s = trip_time_s;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_approximate(&self) -> bool {
        self.approximate
    }

    pub fn sections(&self) -> &[TrackSection] {
        &self.sections
    }

    pub fn total_length_m(&self) -> f64 {
        self.total_length_m
    }

    pub fn destination_m(&self) -> f64 {
        self.total_length_m
    }

    pub fn planning_trip_time_s(&self) -> f64 {
        self.planning_trip_time_s
    }

    pub fn max_speed_limit(&self) -> f64 {
        self.sections
            .iter()
            .map(|s| s.speed_limit_mps)
            .fold(0.0, f64::max)
    }

    pub fn section_index_at(&self, s: f64) -> Result<usize, LineError> {
        if !(0.0..=self.total_length_m).contains(&s) {
            return Err(LineError::OutOfRange {
                s,
                length: self.total_length_m,
            });
        }
        Ok(self.index_clamped(s))
    }

    /// Section index for any position; positions beyond either end map to
    /// the first or last section. Used by the physics, which may step a
    /// little past the destination.
    pub fn index_clamped(&self, s: f64) -> usize {
        // Number of sections whose start is <= s, minus one.
        let idx = self.sections.partition_point(|sec| sec.start_m <= s);
        idx.saturating_sub(1)
    }

    pub fn speed_limit_at(&self, s: f64) -> Result<f64, LineError> {
        Ok(self.sections[self.section_index_at(s)?].speed_limit_mps)
    }

    pub fn gradient_at(&self, s: f64) -> Result<f64, LineError> {
        Ok(self.sections[self.section_index_at(s)?].slope_angle_rad)
    }

    pub fn curve_radius_at(&self, s: f64) -> Result<Option<f64>, LineError> {
        Ok(self.sections[self.section_index_at(s)?].curve_radius_m)
    }

    pub(crate) fn sin_slope_clamped(&self, s: f64) -> f64 {
        self.sin_slope[self.index_clamped(s)]
    }

    pub(crate) fn curve_radius_clamped(&self, s: f64) -> Option<f64> {
        self.sections[self.index_clamped(s)].curve_radius_m
    }

    pub(crate) fn speed_limit_clamped(&self, s: f64) -> f64 {
        self.sections[self.index_clamped(s)].speed_limit_mps
    }

    /// Lowest speed limit from the section containing `s` to the end.
    pub(crate) fn min_limit_ahead_clamped(&self, s: f64) -> f64 {
        self.min_limit_from[self.index_clamped(s)]
    }

    /// Nearest downstream boundary where the limit falls below the limit of
    /// the section containing `s`, with the lower limit.
    pub fn next_limit_drop(&self, s: f64) -> Option<(f64, f64)> {
        let i = self.index_clamped(s.clamp(0.0, self.total_length_m));
        self.next_drop[i].map(|j| {
            let sec = &self.sections[j];
            (sec.start_m, sec.speed_limit_mps)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, LineError> {
        let file: LineFile = toml::from_str(text)?;
        file.into_profile()
    }

    pub fn to_toml_string(&self) -> String {
        let file = LineFile {
            name: (!self.name.is_empty()).then(|| self.name.clone()),
            total_length_m: self.total_length_m,
            planning_trip_time_s: self.planning_trip_time_s,
            approximate: self.approximate,
            section: self
                .sections
                .iter()
                .map(|s| SectionEntry {
                    start_m: s.start_m,
                    end_m: s.end_m,
                    speed_limit_mps: s.speed_limit_mps,
                    grade_permille: s.grade_permille(),
                    curve_radius_m: s.curve_radius_m,
                })
                .collect(),
        };
        toml::to_string(&file).expect("line file serializes")
    }
}

fn validate(sections: &[TrackSection], total: f64, trip_time: f64) -> Result<(), Violation> {
    if sections.is_empty() {
        return Err(Violation::Empty);
    }
    for (index, sec) in sections.iter().enumerate() {
        let finite = [sec.start_m, sec.end_m, sec.speed_limit_mps, sec.slope_angle_rad]
            .iter()
            .all(|x| x.is_finite())
            && sec.curve_radius_m.is_none_or(f64::is_finite);
        if !finite {
            return Err(Violation::NonFinite { index });
        }
    }
    if sections[0].start_m.abs() > BOUNDARY_TOL_M {
        return Err(Violation::FirstStart {
            start: sections[0].start_m,
        });
    }
    for (index, sec) in sections.iter().enumerate() {
        if sec.end_m <= sec.start_m {
            return Err(Violation::EmptySection {
                index,
                start: sec.start_m,
                end: sec.end_m,
            });
        }
        if sec.speed_limit_mps <= 0.0 {
            return Err(Violation::NonPositiveLimit {
                index,
                limit: sec.speed_limit_mps,
            });
        }
        if let Some(radius) = sec.curve_radius_m {
            if radius <= MIN_CURVE_RADIUS_M {
                return Err(Violation::CurveRadius { index, radius });
            }
        }
        if let Some(next) = sections.get(index + 1) {
            let diff = next.start_m - sec.end_m;
            if diff > BOUNDARY_TOL_M {
                return Err(Violation::Gap {
                    at: sec.end_m,
                    next_start: next.start_m,
                });
            }
            if diff < -BOUNDARY_TOL_M {
                return Err(Violation::Overlap {
                    at: sec.end_m,
                    next_start: next.start_m,
                });
            }
        }
    }
    let end = sections[sections.len() - 1].end_m;
    if !total.is_finite() || (end - total).abs() > BOUNDARY_TOL_M {
        return Err(Violation::LengthMismatch { end, total });
    }
    if !(trip_time > 0.0) || !trip_time.is_finite() {
        return Err(Violation::TripTime(trip_time));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    total_length_m: f64,
    planning_trip_time_s: f64,
    #[serde(default)]
    approximate: bool,
    #[serde(default)]
    section: Vec<SectionEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SectionEntry {
    start_m: f64,
    end_m: f64,
    speed_limit_mps: f64,
    grade_permille: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    curve_radius_m: Option<f64>,
}

impl LineFile {
    fn into_profile(self) -> Result<LineProfile, LineError> {
        let sections = self
            .section
            .into_iter()
            .map(|e| {
                TrackSection::new(
                    e.start_m,
                    e.end_m,
                    e.speed_limit_mps,
                    e.grade_permille,
                    e.curve_radius_m,
                )
            })
            .collect();
        let profile = LineProfile::new(sections, self.total_length_m, self.planning_trip_time_s)?
            .with_name(self.name.unwrap_or_default())
            .with_approximate(self.approximate);
        Ok(profile)
    }
}

/// Shape of the synthetic lines produced by [`random_line`].
#[derive(Debug, Clone)]
pub struct RandomLineSpec {
    pub sections: std::ops::RangeInclusive<usize>,
    pub section_length_m: std::ops::Range<f64>,
    pub speed_limits_mps: Vec<f64>,
    pub max_grade_permille: f64,
    pub curve_probability: f64,
    pub curve_radius_m: std::ops::Range<f64>,
}

impl Default for RandomLineSpec {
    fn default() -> Self {
        Self {
            sections: 2..=7,
            section_length_m: 80.0..500.0,
            // 30..80 km/h in 10 km/h steps.
            speed_limits_mps: vec![8.33, 11.11, 13.89, 16.67, 19.44, 22.22],
            max_grade_permille: 25.0,
            curve_probability: 0.3,
            curve_radius_m: 150.0..1200.0,
        }
    }
}

/// A random valid line for stress tests. The planning time is a generous
/// multiple of the length over the average limit.
pub fn random_line<R: Rng + ?Sized>(rng: &mut R, spec: &RandomLineSpec) -> LineProfile {
    let count = rng.gen_range(spec.sections.clone());
    let mut sections = Vec::with_capacity(count);
    let mut start = 0.0;
    for _ in 0..count {
        let length = rng.gen_range(spec.section_length_m.clone()).round();
        let limit = spec.speed_limits_mps[rng.gen_range(0..spec.speed_limits_mps.len())];
        let grade = if spec.max_grade_permille > 0.0 {
            rng.gen_range(-spec.max_grade_permille..=spec.max_grade_permille)
        } else {
            0.0
        };
        let curve = (rng.gen::<f64>() < spec.curve_probability)
            .then(|| rng.gen_range(spec.curve_radius_m.clone()));
        sections.push(TrackSection::new(start, start + length, limit, grade, curve));
        start += length;
    }
    let mean_limit =
        sections.iter().map(|s| s.speed_limit_mps * s.length_m()).sum::<f64>() / start;
    let trip_time = (1.6 * start / mean_limit).ceil() + 20.0;
    LineProfile::new(sections, start, trip_time).expect("generated line is valid")
}
