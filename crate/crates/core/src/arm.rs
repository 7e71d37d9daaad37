//! Piecewise-constant-curvature surrogate of the cable-driven arm.
//!
//! Three segments (shoulder, elbow, wrist) each carry three cables at 120°
//! spacing. Cables are cumulative: elbow cables also run through the
//! shoulder, wrist cables through both. Segment `j` sees, for each of its
//! own cables, the length left over after the proximal routing, and bends
//! as a circular arc of length `s` with bending vector `u = r·θ·(cos φ, sin φ)`.
//! A cable at angle `ψ` then has routed length `s − u·(cos ψ, sin ψ)`.
//!
//! Springs keep every segment at most at its neutral length and push it
//! straight; cables can only pull. When the three cables ask for more length
//! than the neutral arc, the segment stays at neutral length and takes the
//! smallest bend compatible with the tension-only constraints, leaving the
//! excess as slack.

use std::f64::consts::TAU;

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::quat::{self, Quat};

/// Cables with more slack than this (mm) are treated as slack.
pub const SLACK_TOL: f64 = 1e-9;
pub const REFINE_STEP: f64 = 0.5;
pub const REFINE_MOVE_MM: f64 = 3.0;
pub const REFINE_MOVE_DEG: f64 = 1.0;
pub const REFINE_MAX_STEPS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArmError {
    #[error("cable {cable} is not finite")]
    NonFinite { cable: usize },
    #[error("cable {cable} length {length} mm below the retraction limit {min} mm")]
    Retraction { cable: usize, length: f64, min: f64 },
    #[error("segment {segment} bends {angle_deg:.3} deg, limit {limit_deg} deg")]
    BendEnvelope { segment: usize, angle_deg: f64, limit_deg: f64 },
    #[error("segment {segment} compressed to strain {strain:.4}, limit {limit}")]
    CompressionEnvelope { segment: usize, strain: f64, limit: f64 },
    #[error("refinement did not converge within {steps} steps")]
    NoConvergence { steps: usize },
    #[error("geometry config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmGeometry {
    pub neutral_length: f64,
    pub joints_per_segment: [usize; 3],
    pub cable_routing_radius: f64,
    /// Angle of the first cable of each segment, degrees; the others follow at 120°.
    pub cable_offsets_deg: [f64; 3],
    pub max_retraction: f64,
    pub joint_bend_limit_deg: f64,
    /// Largest axial compression of a segment as a fraction of its neutral length.
    pub max_segment_strain: f64,
    pub conical_spring_k: f64,
    pub extension_spring_k: f64,
}

impl Default for ArmGeometry {
    fn default() -> Self {
        ArmGeometry {
            neutral_length: 710.0,
            joints_per_segment: [3, 2, 2],
            cable_routing_radius: 40.0,
            cable_offsets_deg: [0.0, 0.0, 0.0],
            max_retraction: 250.0,
            joint_bend_limit_deg: 45.0,
            max_segment_strain: 0.35,
            conical_spring_k: 1.22,
            extension_spring_k: 0.07,
        }
    }
}

const CONFIG_KEYS: [&str; 9] = [
    "neutral_length_mm",
    "joints_per_segment",
    "routing_radius_mm",
    "cable_offsets_deg",
    "max_retraction_mm",
    "joint_bend_limit_deg",
    "max_segment_strain",
    "conical_spring_k_n_per_mm",
    "extension_spring_k_n_per_mm",
];

fn parse_triple<T: std::str::FromStr>(key: &str, v: &str) -> Result<[T; 3], ArmError> {
    let parts: Vec<T> = v
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| ArmError::Config(format!("{key}: bad value {p:?}"))))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| ArmError::Config(format!("{key}: expected three comma-separated values")))
}

impl ArmGeometry {
    pub fn validate(&self) -> Result<(), ArmError> {
        let bad = |m: &str| Err(ArmError::Config(m.to_string()));
        if self.joints_per_segment.iter().sum::<usize>() != 7 || self.joints_per_segment.contains(&0) {
            return bad("joints_per_segment must be positive and sum to 7");
        }
        for (name, v) in [
            ("neutral_length_mm", self.neutral_length),
            ("routing_radius_mm", self.cable_routing_radius),
            ("max_retraction_mm", self.max_retraction),
            ("joint_bend_limit_deg", self.joint_bend_limit_deg),
            ("conical_spring_k_n_per_mm", self.conical_spring_k),
            ("extension_spring_k_n_per_mm", self.extension_spring_k),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.max_segment_strain > 0.0 && self.max_segment_strain < 1.0) {
            return bad("max_segment_strain must lie in (0, 1)");
        }
        if self.cable_offsets_deg.iter().any(|a| !a.is_finite()) {
            return bad("cable_offsets_deg must be finite");
        }
        Ok(())
    }

    /// Parses `key = value` text. Blank lines and `#` comments are ignored;
    /// missing keys keep their defaults, unknown keys are an error.
    pub fn from_config_str(text: &str) -> Result<Self, ArmError> {
        let mut g = ArmGeometry::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ArmError::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let num = || v.parse::<f64>().map_err(|_| ArmError::Config(format!("{k}: bad number {v:?}")));
            match k {
                "neutral_length_mm" => g.neutral_length = num()?,
                "joints_per_segment" => g.joints_per_segment = parse_triple(k, v)?,
                "routing_radius_mm" => g.cable_routing_radius = num()?,
                "cable_offsets_deg" => g.cable_offsets_deg = parse_triple(k, v)?,
                "max_retraction_mm" => g.max_retraction = num()?,
                "joint_bend_limit_deg" => g.joint_bend_limit_deg = num()?,
                "max_segment_strain" => g.max_segment_strain = num()?,
                "conical_spring_k_n_per_mm" => g.conical_spring_k = num()?,
                "extension_spring_k_n_per_mm" => g.extension_spring_k = num()?,
                other => return Err(ArmError::Config(format!("unknown key {other:?}; known keys: {}", CONFIG_KEYS.join(", ")))),
            }
        }
        g.validate()?;
        Ok(g)
    }

    /// Canonical config text; also the input of [`ArmGeometry::hash`].
    pub fn to_config_string(&self) -> String {
        let j = self.joints_per_segment;
        let o = self.cable_offsets_deg;
        format!(
            "neutral_length_mm = {}\njoints_per_segment = {},{},{}\nrouting_radius_mm = {}\ncable_offsets_deg = {},{},{}\n\
             max_retraction_mm = {}\njoint_bend_limit_deg = {}\nmax_segment_strain = {}\n\
             conical_spring_k_n_per_mm = {}\nextension_spring_k_n_per_mm = {}\n",
            self.neutral_length,
            j[0],
            j[1],
            j[2],
            self.cable_routing_radius,
            o[0],
            o[1],
            o[2],
            self.max_retraction,
            self.joint_bend_limit_deg,
            self.max_segment_strain,
            self.conical_spring_k,
            self.extension_spring_k
        )
    }

    /// SHA-256 of the canonical config text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_config_string().as_bytes()))
    }

    pub fn segment_lengths(&self) -> [f64; 3] {
        // the last segment absorbs rounding so the lengths sum to neutral_length exactly
        let total = self.joints_per_segment.iter().sum::<usize>() as f64;
        let j = self.joints_per_segment.map(|j| j as f64);
        let a = self.neutral_length * j[0] / total;
        let b = self.neutral_length * j[1] / total;
        [a, b, self.neutral_length - (a + b)]
    }

    /// Cable lengths of the straight, uncompressed arm.
    pub fn home(&self) -> ConfigurationL {
        let s = self.segment_lengths();
        let cum = [s[0], s[0] + s[1], self.neutral_length];
        ConfigurationL { cable_lengths: std::array::from_fn(|i| cum[i / 3]) }
    }

    /// Routing angle of cable `k` (0..3) of segment `seg`, radians.
    pub fn cable_angle(&self, seg: usize, k: usize) -> f64 {
        self.cable_offsets_deg[seg].to_radians() + k as f64 * TAU / 3.0
    }

    fn cable_dir(&self, seg: usize, k: usize) -> Vector2<f64> {
        let a = self.cable_angle(seg, k);
        Vector2::new(a.cos(), a.sin())
    }

    pub fn bend_limit(&self, seg: usize) -> f64 {
        self.joints_per_segment[seg] as f64 * self.joint_bend_limit_deg.to_radians()
    }
}

/// Nine cable lengths, mm: shoulder 0..3, elbow 3..6, wrist 6..9.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigurationL {
    pub cable_lengths: [f64; 9],
}

impl ConfigurationL {
    pub fn new(cable_lengths: [f64; 9]) -> Self {
        ConfigurationL { cable_lengths }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndEffectorPose {
    pub position: [f64; 3],
    /// Unit quaternion `(w, x, y, z)` with `w >= 0`.
    pub orientation: Quat,
}

impl EndEffectorPose {
    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let t = iso.translation.vector;
        EndEffectorPose { position: [t.x, t.y, t.z], orientation: quat::from_unit(&iso.rotation) }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let p = self.position;
        Isometry3::from_parts(Translation3::new(p[0], p[1], p[2]), quat::to_unit(&self.orientation))
    }

    pub fn distance(&self, other: &EndEffectorPose) -> f64 {
        (Vector3::from(self.position) - Vector3::from(other.position)).norm()
    }

    /// Geodesic orientation difference, degrees.
    pub fn angle_to(&self, other: &EndEffectorPose) -> f64 {
        quat::angular_distance(&self.orientation, &other.orientation).to_degrees()
    }
}

/// Resolved arc of one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentState {
    pub arc_length: f64,
    pub bend: [f64; 2],
    pub bend_angle: f64,
    pub azimuth: f64,
    /// Slack of the segment's own three cables, mm (≤ 0 means taut).
    pub slack: [f64; 3],
}

/// Minimum-norm `u` with `u·e_i >= c_i` for three directions at 120°.
fn min_norm_bend(e: &[Vector2<f64>; 3], c: [f64; 3]) -> Vector2<f64> {
    let feasible = |u: &Vector2<f64>| (0..3).all(|i| u.dot(&e[i]) >= c[i] - 1e-12);
    let mut best = Vector2::zeros();
    if feasible(&best) {
        return best;
    }
    let mut best_norm = f64::INFINITY;
    let mut consider = |u: Vector2<f64>| {
        if feasible(&u) && u.norm() < best_norm {
            best_norm = u.norm();
            best = u;
        }
    };
    for i in 0..3 {
        if c[i] > 0.0 {
            consider(e[i] * c[i]);
        }
    }
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let m = nalgebra::Matrix2::new(e[i].x, e[i].y, e[j].x, e[j].y);
        if let Some(inv) = m.try_inverse() {
            consider(inv * Vector2::new(c[i], c[j]));
        }
    }
    best
}

/// Resolves the three segment arcs from the cable lengths without checking
/// limits or envelopes. Works in displacements from home so the home
/// configuration resolves to exactly straight, uncompressed segments.
pub fn segment_states(geom: &ArmGeometry, l: &ConfigurationL) -> [SegmentState; 3] {
    let lens = geom.segment_lengths();
    let home = geom.home();
    let r = geom.cable_routing_radius;
    // (arc length change, bending vector) of the proximal segments
    let mut done: Vec<(f64, Vector2<f64>)> = Vec::with_capacity(3);
    let mut out = [SegmentState { arc_length: 0.0, bend: [0.0; 2], bend_angle: 0.0, azimuth: 0.0, slack: [0.0; 3] }; 3];
    for seg in 0..3 {
        let e: [Vector2<f64>; 3] = std::array::from_fn(|k| geom.cable_dir(seg, k));
        let d: [f64; 3] = std::array::from_fn(|k| {
            let i = 3 * seg + k;
            let proximal: f64 = done.iter().map(|(c, u)| c - u.dot(&e[k])).sum();
            (l.cable_lengths[i] - home.cable_lengths[i]) - proximal
        });
        let mean = (d[0] + d[1] + d[2]) / 3.0;
        let (c, u) = if mean <= 0.0 {
            let sum = e[0] * (d[0] - mean) + e[1] * (d[1] - mean) + e[2] * (d[2] - mean);
            (mean, sum * (-2.0 / 3.0))
        } else {
            (0.0, min_norm_bend(&e, d.map(|v| -v)))
        };
        let slack = std::array::from_fn(|k| d[k] - (c - u.dot(&e[k])));
        out[seg] = SegmentState {
            arc_length: lens[seg] + c,
            bend: [u.x, u.y],
            bend_angle: u.norm() / r,
            azimuth: u.y.atan2(u.x),
            slack,
        };
        done.push((c, u));
    }
    out
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Base-to-tip transform of one constant-curvature arc.
pub fn segment_transform(st: &SegmentState) -> Isometry3<f64> {
    let (s, th, phi) = (st.arc_length, st.bend_angle, st.azimuth);
    let radial = s * (th / 2.0).sin() * sinc(th / 2.0);
    let t = Translation3::new(radial * phi.cos(), radial * phi.sin(), s * sinc(th));
    let axis = Unit::new_unchecked(Vector3::new(-phi.sin(), phi.cos(), 0.0));
    Isometry3::from_parts(t, UnitQuaternion::from_axis_angle(&axis, th))
}

fn check_limits(geom: &ArmGeometry, l: &ConfigurationL) -> Result<(), ArmError> {
    let home = geom.home();
    for (i, (&v, &h)) in l.cable_lengths.iter().zip(&home.cable_lengths).enumerate() {
        if !v.is_finite() {
            return Err(ArmError::NonFinite { cable: i });
        }
        if v < h - geom.max_retraction {
            return Err(ArmError::Retraction { cable: i, length: v, min: h - geom.max_retraction });
        }
    }
    Ok(())
}

fn check_envelope(geom: &ArmGeometry, states: &[SegmentState; 3]) -> Result<(), ArmError> {
    let lens = geom.segment_lengths();
    for (seg, st) in states.iter().enumerate() {
        let limit = geom.bend_limit(seg);
        if st.bend_angle > limit {
            return Err(ArmError::BendEnvelope { segment: seg, angle_deg: st.bend_angle.to_degrees(), limit_deg: limit.to_degrees() });
        }
        let strain = 1.0 - st.arc_length / lens[seg];
        if strain > geom.max_segment_strain {
            return Err(ArmError::CompressionEnvelope { segment: seg, strain, limit: geom.max_segment_strain });
        }
    }
    Ok(())
}

fn compose(states: &[SegmentState; 3]) -> EndEffectorPose {
    let iso = states.iter().fold(Isometry3::identity(), |acc, st| acc * segment_transform(st));
    EndEffectorPose::from_isometry(&iso)
}

/// End-effector pose for a cable configuration. Cables may be paid out past
/// home (they go slack); retraction beyond `max_retraction` and arcs outside
/// the bend or compression envelope are errors.
pub fn forward_kinematics(geom: &ArmGeometry, l: &ConfigurationL) -> Result<EndEffectorPose, ArmError> {
    check_limits(geom, l)?;
    let states = segment_states(geom, l);
    check_envelope(geom, &states)?;
    Ok(compose(&states))
}

/// Like [`forward_kinematics`], but arcs outside the bend or compression
/// envelope are held at its boundary instead of rejected. The flag reports
/// whether that happened.
pub fn forward_kinematics_saturated(geom: &ArmGeometry, l: &ConfigurationL) -> Result<(EndEffectorPose, bool), ArmError> {
    check_limits(geom, l)?;
    let lens = geom.segment_lengths();
    let mut states = segment_states(geom, l);
    let mut saturated = false;
    for (seg, st) in states.iter_mut().enumerate() {
        let limit = geom.bend_limit(seg);
        if st.bend_angle > limit {
            st.bend_angle = limit;
            saturated = true;
        }
        let min_len = lens[seg] * (1.0 - geom.max_segment_strain);
        if st.arc_length < min_len {
            st.arc_length = min_len;
            saturated = true;
        }
    }
    Ok((compose(&states), saturated))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackReport {
    pub well_defined: bool,
    /// Per-cable slack, mm; zero when taut.
    pub slack: [f64; 9],
}

/// A configuration is well defined when no cable is slack.
pub fn check_well_defined(geom: &ArmGeometry, l: &ConfigurationL) -> SlackReport {
    let st = segment_states(geom, l);
    let slack: [f64; 9] = std::array::from_fn(|i| {
        let v = st[i / 3].slack[i % 3];
        if v > SLACK_TOL {
            v
        } else {
            0.0
        }
    });
    let finite = l.cable_lengths.iter().all(|v| v.is_finite());
    SlackReport { well_defined: finite && slack.iter().all(|&s| s == 0.0), slack }
}

/// Takes up slack cable by cable, most proximal first, in `REFINE_STEP`
/// increments. A cable stops being tensioned once it is taut or once the
/// last step moved the end effector by more than 3 mm or 1°.
pub fn refine_configuration(geom: &ArmGeometry, l: &ConfigurationL) -> Result<ConfigurationL, ArmError> {
    let mut cur = *l;
    let mut steps = 0;
    loop {
        let report = check_well_defined(geom, &cur);
        if report.well_defined {
            return Ok(cur);
        }
        let Some(cable) = report.slack.iter().position(|&s| s > 0.0) else {
            return Err(ArmError::NonFinite { cable: 0 });
        };
        loop {
            if steps >= REFINE_MAX_STEPS {
                return Err(ArmError::NoConvergence { steps });
            }
            let before = compose(&segment_states(geom, &cur));
            cur.cable_lengths[cable] -= REFINE_STEP;
            steps += 1;
            let states = segment_states(geom, &cur);
            let after = compose(&states);
            let moved = after.distance(&before) > REFINE_MOVE_MM || after.angle_to(&before) > REFINE_MOVE_DEG;
            if moved || states[cable / 3].slack[cable % 3] <= SLACK_TOL {
                break;
            }
        }
    }
}

/// Emulated motion capture: Gaussian position noise per axis (mm) and a
/// rotation about a uniformly random axis with Gaussian angle (deg).
pub fn virtual_mocap<R: Rng + ?Sized>(pose: &EndEffectorPose, sigma_pos: f64, sigma_ang_deg: f64, rng: &mut R) -> EndEffectorPose {
    let mut n = || -> f64 { StandardNormal.sample(rng) };
    let dp = [n(), n(), n()];
    let axis = Vector3::new(n(), n(), n());
    let angle = n() * sigma_ang_deg.to_radians();
    let position = std::array::from_fn(|i| pose.position[i] + sigma_pos * dp[i]);
    let orientation = if angle == 0.0 || axis.norm() == 0.0 {
        pose.orientation
    } else {
        let noise = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        quat::from_unit(&(noise * quat::to_unit(&pose.orientation)))
    };
    EndEffectorPose { position, orientation }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_norm_picks_single_active_constraint() {
        let g = ArmGeometry::default();
        let e: [Vector2<f64>; 3] = std::array::from_fn(|k| g.cable_dir(0, k));
        let u = min_norm_bend(&e, [2.0, -5.0, -5.0]);
        assert!((u - e[0] * 2.0).norm() < 1e-12);
        assert_eq!(min_norm_bend(&e, [-1.0, -1.0, 0.0]), Vector2::zeros());
    }

    #[test]
    fn sinc_is_smooth_at_zero() {
        assert!((sinc(1e-5) - (1e-5f64).sin() / 1e-5).abs() < 1e-15);
        assert_eq!(sinc(0.0), 1.0);
    }
}
