//! Reference paths, waypoint ordering, closed-loop execution through the
//! learned model and the plant, and repeatability statistics.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{forward_kinematics_saturated, virtual_mocap, ArmError, ArmGeometry, ConfigurationL, EndEffectorPose};
use crate::iklearn::{predict_config, IkError, IkModel};
use crate::quat::{self, Quat};
use crate::sampling::{DatasetRow, MocapNoise, ProtocolEvent, RESET_CYCLES, RESET_DELTA_L};

pub use crate::quat::slerp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("degenerate path: {0}")]
    Degenerate(String),
    #[error("a trajectory needs at least 2 waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("waypoint {index} has a non-unit quaternion")]
    NonUnitQuaternion { index: usize },
    #[error("repeatability needs at least 2 trials")]
    TooFewTrials,
    #[error("no points given")]
    NoPoints,
    #[error("waypoint {index}: {source}")]
    Ik { index: usize, source: IkError },
    #[error("waypoint {index}: {source}")]
    Plant { index: usize, source: ArmError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeTag {
    Circle,
    Triangle,
    Stairs,
    Custom,
}

pub const DEFAULT_WAYPOINTS: usize = 100;
pub const DEFAULT_DWELL_S: f64 = 4.0;
pub const DEFAULT_RETRACTION_MM: f64 = 20.0;
pub const DEFAULT_RISE_MM: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTrajectory {
    pub waypoints: Vec<EndEffectorPose>,
    /// Logged only; the surrogate has no dynamics to settle.
    pub dwell_s: f64,
    pub shape: ShapeTag,
}

impl PoseTrajectory {
    /// Checks the invariants and moves every quaternion to `qw >= 0`.
    pub fn new(waypoints: Vec<EndEffectorPose>, dwell_s: f64, shape: ShapeTag) -> Result<Self, TrajectoryError> {
        if waypoints.len() < 2 {
            return Err(TrajectoryError::TooFewWaypoints(waypoints.len()));
        }
        let mut waypoints = waypoints;
        for (index, w) in waypoints.iter_mut().enumerate() {
            if (quat::norm(&w.orientation) - 1.0).abs() > 1e-9 || w.position.iter().any(|c| !c.is_finite()) {
                return Err(TrajectoryError::NonUnitQuaternion { index });
            }
            w.orientation = quat::canonical(w.orientation);
        }
        Ok(PoseTrajectory { waypoints, dwell_s, shape })
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.waypoints.iter().map(|w| w.position).collect()
    }

    /// Replaces each orientation by the mean orientation of the `k` dataset
    /// poses nearest to the waypoint, so the reference stays on the set of
    /// poses the arm actually reaches. Positions are unchanged.
    pub fn with_dataset_orientations(&self, rows: &[DatasetRow], k: usize) -> Result<PoseTrajectory, TrajectoryError> {
        if rows.is_empty() || k == 0 {
            return Err(TrajectoryError::NoPoints);
        }
        let k = k.min(rows.len());
        let mut waypoints = self.waypoints.clone();
        for w in &mut waypoints {
            let mut near: Vec<(f64, usize)> =
                rows.iter().enumerate().map(|(i, r)| (dist2(&r.pose.position, &w.position), i)).collect();
            let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            near.select_nth_unstable_by(k - 1, by_distance);
            near.truncate(k);
            near.sort_by(by_distance);
            let q0 = rows[near[0].1].pose.orientation;
            let mut acc = [0.0; 4];
            for &(_, i) in &near {
                let q = rows[i].pose.orientation;
                let s = if quat::dot(&q, &q0) < 0.0 { -1.0 } else { 1.0 };
                (0..4).for_each(|j| acc[j] += s * q[j]);
            }
            w.orientation = quat::normalize(acc);
        }
        PoseTrajectory::new(waypoints, self.dwell_s, self.shape)
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|j| (a[j] - b[j]).powi(2)).sum()
}

/// Nearest-neighbour chain from `start`; ties go to the lowest index.
pub fn order_waypoints_greedy(points: &[[f64; 3]], start: usize) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut visited = vec![false; points.len()];
    let mut order = Vec::with_capacity(points.len());
    let mut cur = start;
    visited[cur] = true;
    order.push(cur);
    while order.len() < points.len() {
        let here = Vector3::from(points[cur]);
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (i, p) in points.iter().enumerate() {
            if visited[i] {
                continue;
            }
            let d = (Vector3::from(*p) - here).norm_squared();
            if d < best_d {
                best_d = d;
                best = Some(i);
            }
        }
        cur = best.expect("an unvisited point remains");
        visited[cur] = true;
        order.push(cur);
    }
    order
}

/// Sum of leg lengths visiting `points` in `order`.
pub fn tour_length(points: &[[f64; 3]], order: &[usize]) -> f64 {
    order.windows(2).map(|w| (Vector3::from(points[w[1]]) - Vector3::from(points[w[0]])).norm()).sum()
}

/// Geometry of a reference path. Positions in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PathSpec {
    /// Closed loop in the plane `z = center[2]`, a periodic cubic spline
    /// through `control_points` equally spaced points on the circle.
    Circle { center: [f64; 3], radius: f64, control_points: usize },
    /// Straight edges in the plane `z`, with a dip of `retraction` mm along
    /// `-z` at each vertex. Ends where it started.
    Triangle { vertices: [[f64; 2]; 3], z: f64, retraction: f64 },
    /// `steps` pairs of a horizontal move of `run` mm along `direction`
    /// followed by a `+z` move of `rise` mm.
    Stairs { start: [f64; 3], direction: [f64; 2], steps: usize, run: f64, rise: f64 },
}

/// Tool orientation along a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathOrientation {
    /// The same quaternion at every waypoint; identity is tool-down.
    Fixed { q: Quat },
    /// Tool axis tilted away from the arm's z axis by `tilt_deg`, in the
    /// vertical plane through the waypoint. On the axis itself the tilt is
    /// toward `+x`.
    RadialTilt { tilt_deg: f64 },
}

impl PathOrientation {
    pub const TOOL_DOWN: PathOrientation = PathOrientation::Fixed { q: quat::IDENTITY };

    pub fn at(&self, position: &[f64; 3]) -> Quat {
        match *self {
            PathOrientation::Fixed { q } => quat::normalize(q),
            PathOrientation::RadialTilt { tilt_deg } => {
                let az = if position[0].hypot(position[1]) > 1e-9 { position[1].atan2(position[0]) } else { 0.0 };
                quat::from_axis_angle(Vector3::new(-az.sin(), az.cos(), 0.0), tilt_deg.to_radians())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub spec: PathSpec,
    pub waypoints: usize,
    pub orientation: PathOrientation,
    pub dwell_s: f64,
}

impl PathParams {
    pub fn new(spec: PathSpec) -> PathParams {
        PathParams { spec, waypoints: DEFAULT_WAYPOINTS, orientation: PathOrientation::TOOL_DOWN, dwell_s: DEFAULT_DWELL_S }
    }

    pub fn with_orientation(self, orientation: PathOrientation) -> PathParams {
        PathParams { orientation, ..self }
    }

    /// Default shapes sit where sampled datasets are densest: about 380 mm
    /// off the arm axis, 440 mm up.
    pub fn circle() -> PathParams {
        PathParams::new(PathSpec::Circle { center: [0.0, 0.0, 440.0], radius: 380.0, control_points: 12 })
    }

    pub fn triangle() -> PathParams {
        PathParams::new(PathSpec::Triangle {
            vertices: [[440.0, 0.0], [350.0, 51.96152422706632], [350.0, -51.96152422706632]],
            z: 440.0,
            retraction: DEFAULT_RETRACTION_MM,
        })
    }

    pub fn stairs() -> PathParams {
        PathParams::new(PathSpec::Stairs { start: [330.0, 0.0, 400.0], direction: [1.0, 0.0], steps: 3, run: 30.0, rise: DEFAULT_RISE_MM })
    }

    pub fn default_for(shape: ShapeTag) -> Option<PathParams> {
        match shape {
            ShapeTag::Circle => Some(PathParams::circle()),
            ShapeTag::Triangle => Some(PathParams::triangle()),
            ShapeTag::Stairs => Some(PathParams::stairs()),
            ShapeTag::Custom => None,
        }
    }

    pub fn shape(&self) -> ShapeTag {
        match self.spec {
            PathSpec::Circle { .. } => ShapeTag::Circle,
            PathSpec::Triangle { .. } => ShapeTag::Triangle,
            PathSpec::Stairs { .. } => ShapeTag::Stairs,
        }
    }
}

/// Periodic cubic spline through `y` at unit knot spacing, evaluated at `t`
/// in `[0, n)`.
struct PeriodicSpline {
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl PeriodicSpline {
    fn new(y: Vec<f64>) -> PeriodicSpline {
        let n = y.len();
        let mut a = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for i in 0..n {
            let (prev, next) = ((i + n - 1) % n, (i + 1) % n);
            a[(i, prev)] += 1.0;
            a[(i, i)] += 4.0;
            a[(i, next)] += 1.0;
            rhs[i] = 6.0 * (y[next] - 2.0 * y[i] + y[prev]);
        }
        let m = a.lu().solve(&rhs).expect("cyclic spline system is diagonally dominant");
        PeriodicSpline { y, m: m.iter().copied().collect() }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.y.len();
        let i = (t.floor() as usize).min(n - 1);
        let j = (i + 1) % n;
        let u = t - i as f64;
        let v = 1.0 - u;
        v * self.y[i] + u * self.y[j] + ((v * v * v - v) * self.m[i] + (u * u * u - u) * self.m[j]) / 6.0
    }
}

/// `n` points on the polyline through `corners`, every corner included.
/// Interior points are shared between legs by length (largest remainder)
/// and spaced evenly within a leg.
fn polyline(corners: &[Vector3<f64>], n: usize) -> Vec<Vector3<f64>> {
    let legs: Vec<f64> = corners.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = legs.iter().sum();
    let spare = n - corners.len();
    let quota: Vec<f64> = legs.iter().map(|l| l / total * spare as f64).collect();
    let mut counts: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..legs.len()).collect();
    rest.sort_by(|&a, &b| (quota[b] - counts[b] as f64).total_cmp(&(quota[a] - counts[a] as f64)).then(a.cmp(&b)));
    let missing = spare - counts.iter().sum::<usize>();
    for &k in rest.iter().take(missing) {
        counts[k] += 1;
    }
    let mut out = Vec::with_capacity(n);
    for (k, w) in corners.windows(2).enumerate() {
        out.push(w[0]);
        for s in 1..=counts[k] {
            let t = s as f64 / (counts[k] + 1) as f64;
            out.push(w[0] + (w[1] - w[0]) * t);
        }
    }
    out.push(*corners.last().unwrap());
    out
}

/// Corner points of a triangle or stairs path, in visiting order.
pub fn path_corners(spec: &PathSpec) -> Vec<[f64; 3]> {
    match *spec {
        PathSpec::Circle { .. } => Vec::new(),
        PathSpec::Triangle { vertices, z, retraction } => {
            let mut c = Vec::new();
            for v in vertices.iter().chain(std::iter::once(&vertices[0])).take(4) {
                c.push([v[0], v[1], z]);
            }
            // dip at each vertex, then back up before leaving it
            let mut out = Vec::new();
            for (i, p) in c.iter().enumerate() {
                out.push(*p);
                if i < 3 && retraction > 0.0 {
                    out.push([p[0], p[1], z - retraction]);
                    out.push(*p);
                }
            }
            out
        }
        PathSpec::Stairs { start, direction, steps, run, rise } => {
            let d = Vector3::new(direction[0], direction[1], 0.0).normalize();
            let mut p = Vector3::from(start);
            let mut out = vec![start];
            for _ in 0..steps {
                p += d * run;
                out.push(p.into());
                p.z += rise;
                out.push(p.into());
            }
            out
        }
    }
}

pub fn make_path(params: &PathParams) -> Result<PoseTrajectory, TrajectoryError> {
    let n = params.waypoints;
    if n < 2 {
        return Err(TrajectoryError::TooFewWaypoints(n));
    }
    let positions: Vec<Vector3<f64>> = match params.spec {
        PathSpec::Circle { center, radius, control_points } => {
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(TrajectoryError::Degenerate("circle radius must be positive".into()));
            }
            if control_points < 4 {
                return Err(TrajectoryError::Degenerate("a circle needs at least 4 control points".into()));
            }
            let ang = |k: usize| std::f64::consts::TAU * k as f64 / control_points as f64;
            let sx = PeriodicSpline::new((0..control_points).map(|k| center[0] + radius * ang(k).cos()).collect());
            let sy = PeriodicSpline::new((0..control_points).map(|k| center[1] + radius * ang(k).sin()).collect());
            // n samples around the closed loop; the last one lands back on the first
            (0..n)
                .map(|i| {
                    let t = (i as f64 / (n - 1) as f64 * control_points as f64) % control_points as f64;
                    Vector3::new(sx.eval(t), sy.eval(t), center[2])
                })
                .collect()
        }
        PathSpec::Triangle { vertices, retraction, .. } => {
            let [a, b, c] = vertices.map(|v| Vector3::new(v[0], v[1], 0.0));
            if (b - a).cross(&(c - a)).norm() <= 1e-9 {
                return Err(TrajectoryError::Degenerate("triangle vertices are collinear".into()));
            }
            if retraction < 0.0 {
                return Err(TrajectoryError::Degenerate("retraction must be non-negative".into()));
            }
            corners_to_path(&params.spec, n)?
        }
        PathSpec::Stairs { steps, run, rise, direction, .. } => {
            if steps == 0 || !(run > 0.0) || !(rise > 0.0) || direction[0].hypot(direction[1]) == 0.0 {
                return Err(TrajectoryError::Degenerate("stairs need steps, run, rise and a direction".into()));
            }
            corners_to_path(&params.spec, n)?
        }
    };
    let waypoints = positions
        .into_iter()
        .map(|p| {
            let position: [f64; 3] = p.into();
            EndEffectorPose { position, orientation: params.orientation.at(&position) }
        })
        .collect();
    PoseTrajectory::new(waypoints, params.dwell_s, params.shape())
}

fn corners_to_path(spec: &PathSpec, n: usize) -> Result<Vec<Vector3<f64>>, TrajectoryError> {
    let corners: Vec<Vector3<f64>> = path_corners(spec).into_iter().map(Vector3::from).collect();
    if n < corners.len() {
        return Err(TrajectoryError::Degenerate(format!("{} corners need at least that many waypoints", corners.len())));
    }
    Ok(polyline(&corners, n))
}

/// Mean and sample SD (`n - 1`); SD is 0 for a single value.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub shape: ShapeTag,
    pub reference: Vec<EndEffectorPose>,
    pub commanded: Vec<ConfigurationL>,
    pub measured: Vec<EndEffectorPose>,
    pub position_errors_mm: Vec<f64>,
    pub angular_errors_deg: Vec<f64>,
    /// The model's output was clamped to the cable limits.
    pub clamped: Vec<bool>,
    /// The commanded arc left the bend or compression envelope and was held
    /// at its boundary.
    pub saturated: Vec<bool>,
    pub mean_position_mm: f64,
    pub sd_position_mm: f64,
    pub mean_angular_deg: f64,
    pub sd_angular_deg: f64,
}

struct Visit {
    config: ConfigurationL,
    clamped: bool,
    saturated: bool,
    measured: EndEffectorPose,
}

/// One visit: model → plant → motion capture.
fn visit(
    model: &IkModel,
    geom: &ArmGeometry,
    target: &EndEffectorPose,
    noise: MocapNoise,
    rng: &mut impl Rng,
    index: usize,
) -> Result<Visit, TrajectoryError> {
    let pred = predict_config(model, geom, target).map_err(|source| TrajectoryError::Ik { index, source })?;
    let (pose, saturated) =
        forward_kinematics_saturated(geom, &pred.config).map_err(|source| TrajectoryError::Plant { index, source })?;
    let measured = virtual_mocap(&pose, noise.sigma_pos, noise.sigma_ang_deg, rng);
    Ok(Visit { config: pred.config, clamped: pred.clamped, saturated, measured })
}

pub fn execute(
    traj: &PoseTrajectory,
    model: &IkModel,
    geom: &ArmGeometry,
    noise: MocapNoise,
    rng: &mut impl Rng,
) -> Result<TrackingReport, TrajectoryError> {
    let n = traj.waypoints.len();
    let (mut commanded, mut measured) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut clamped, mut saturated) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut pos, mut ang) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (i, w) in traj.waypoints.iter().enumerate() {
        let v = visit(model, geom, w, noise, rng, i)?;
        pos.push(w.distance(&v.measured));
        ang.push(w.angle_to(&v.measured));
        commanded.push(v.config);
        clamped.push(v.clamped);
        saturated.push(v.saturated);
        measured.push(v.measured);
    }
    let (mean_position_mm, sd_position_mm) = mean_sd(&pos);
    let (mean_angular_deg, sd_angular_deg) = mean_sd(&ang);
    Ok(TrackingReport {
        shape: traj.shape,
        reference: traj.waypoints.clone(),
        commanded,
        measured,
        position_errors_mm: pos,
        angular_errors_deg: ang,
        clamped,
        saturated,
        mean_position_mm,
        sd_position_mm,
        mean_angular_deg,
        sd_angular_deg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepeatMode {
    /// Visit order reshuffled every trial.
    Point,
    /// Same order every trial.
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatabilityReport {
    pub mode: RepeatMode,
    pub trials: usize,
    /// Pooled per-axis positional SD, mm.
    pub sd_pos_mm: f64,
    /// Pooled SD of the rotation residual angle, deg.
    pub sd_ang_deg: f64,
    pub events: Vec<ProtocolEvent>,
}

/// Rotation vector of `b` relative to `a`, exactly zero when they match.
fn rotation_residual(a: &Quat, b: &Quat) -> Vector3<f64> {
    if a == b {
        return Vector3::zeros();
    }
    (quat::to_unit(a).inverse() * quat::to_unit(b)).scaled_axis()
}

/// Visits every point in each of `trials` trials, each preceded by the
/// compression reset, and pools residuals from each point's cluster mean.
pub fn repeatability(
    points: &[EndEffectorPose],
    trials: usize,
    mode: RepeatMode,
    model: &IkModel,
    geom: &ArmGeometry,
    noise: MocapNoise,
    rng: &mut impl Rng,
) -> Result<RepeatabilityReport, TrajectoryError> {
    if trials < 2 {
        return Err(TrajectoryError::TooFewTrials);
    }
    if points.is_empty() {
        return Err(TrajectoryError::NoPoints);
    }
    let mut visits: Vec<Vec<EndEffectorPose>> = vec![Vec::with_capacity(trials); points.len()];
    let mut events = Vec::new();
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut done = 0;
    for _ in 0..trials {
        events.push(ProtocolEvent::CompressionReset { after_rows: done, cycles: RESET_CYCLES, delta_l: RESET_DELTA_L });
        if mode == RepeatMode::Point {
            order.shuffle(rng);
        }
        for &i in &order {
            visits[i].push(visit(model, geom, &points[i], noise, rng, i)?.measured);
            done += 1;
        }
    }
    let (mut sq_pos, mut sq_ang) = (0.0, 0.0);
    for cluster in &visits {
        let p0 = Vector3::from(cluster[0].position);
        let q0 = cluster[0].orientation;
        let dp: Vec<Vector3<f64>> = cluster.iter().map(|v| Vector3::from(v.position) - p0).collect();
        let dq: Vec<Vector3<f64>> = cluster.iter().map(|v| rotation_residual(&q0, &v.orientation)).collect();
        let mp = dp.iter().sum::<Vector3<f64>>() / trials as f64;
        let mq = dq.iter().sum::<Vector3<f64>>() / trials as f64;
        sq_pos += dp.iter().map(|d| (d - mp).norm_squared()).sum::<f64>();
        sq_ang += dq.iter().map(|d| (d - mq).norm_squared()).sum::<f64>();
    }
    let dof = (points.len() * (trials - 1)) as f64;
    Ok(RepeatabilityReport {
        mode,
        trials,
        sd_pos_mm: (sq_pos / (3.0 * dof)).sqrt(),
        sd_ang_deg: (sq_ang / dof).sqrt().to_degrees(),
        events,
    })
}
