//! Mobility of cell linkages and kinematics of constant-velocity couplings.
//!
//! Mobility analysis linearises the link-length and common-sphere
//! constraints, takes the SVD of the constraint Jacobian and keeps the
//! near-null directions that are not global rigid motions. Those soft modes
//! are then labelled by how they transform under the cell's symmetry: modes
//! invariant under the `N`-fold rotation split into extension (mirror-even)
//! and twist (mirror-odd); modes in the first rotational harmonic are bending
//! when they tilt the top pole set against the bottom one and shear when
//! they do not.

use std::f64::consts::{FRAC_PI_4, TAU};

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Matrix6, SymmetricEigen, Translation3, Unit, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{cell_radius, fold_rotation, mirror, node_permutation, GeometryError, LinkageGraph};

/// Soft/stiff threshold relative to the largest singular value.
pub const SOFT_THRESHOLD: f64 = 1e-8;
/// A twist test vector with a smaller projection onto the soft space is stiff.
pub const TWIST_TOLERANCE: f64 = 1e-6;
/// Largest bend per joint, rad.
pub const BEND_ENVELOPE: f64 = FRAC_PI_4;
/// Parasitic fraction when the inner column is driven.
pub const INNER_DRIVEN_COUPLING: f64 = 0.0051;
/// Parasitic fraction when the outer column is driven.
pub const OUTER_DRIVEN_COUPLING: f64 = 0.0238;
/// Rated torque of a truss cell, N·mm. Configurable; see `nested_cross_coupling`.
pub const TRUSS_TORQUE_CAPACITY: f64 = 490.0;
/// Rated torque of an equatorial cell, N·mm.
pub const EQUATORIAL_TORQUE_CAPACITY: f64 = 105.0;
/// Load-cell sensitivity below which cross-coupling is unmeasurable, N·mm.
pub const CROSS_COUPLING_SENSITIVITY: f64 = 2.5;

/// Torsional rigidity retained under axial strain, normalised to neutral.
/// Anchored at (0, 1) and (0.20, 0.836); intermediate points follow a
/// quadratic softening through both anchors.
pub const RIGIDITY_TABLE: [(f64, f64); 6] =
    [(0.0, 1.0), (0.05, 0.98975), (0.10, 0.959), (0.15, 0.90775), (0.20, 0.836), (0.25, 0.74375)];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("duplicate nodes {0} and {1} make the constraint Jacobian rank deficient")]
    DuplicateNodes(usize, usize),
    #[error("SVD failed: {0}")]
    Svd(String),
    #[error("bend angle {bend} rad outside the +/-pi/4 envelope")]
    OutOfEnvelope { bend: f64 },
    #[error("non-finite joint state or phase")]
    NonFinite,
    #[error("strain {0} outside the rigidity table [0, 0.25]")]
    StrainOutOfRange(f64),
    #[error("driven torque must be non-negative, got {0}")]
    NegativeTorque(f64),
    #[error("nested columns disagree: {0}")]
    NestedMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeLabel {
    Extension,
    Bending,
    Shear,
    Twist,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftMode {
    pub label: ModeLabel,
    /// `|J v|` for the unit mode vector; zero up to round-off.
    pub sv: f64,
    /// Node velocities (3 per node), sphere-centre velocity (3), radius rate.
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpectrum {
    /// All singular values of the constraint Jacobian, descending, one per
    /// column (structural zeros included).
    pub singular_values: Vec<f64>,
    pub modes: Vec<SoftMode>,
    /// Null directions explained by global rigid motion.
    pub rigid_count: usize,
    /// Norm of the unit twist test vector projected onto the soft subspace.
    pub twist_projection: f64,
}

impl ModeSpectrum {
    pub fn count(&self, label: ModeLabel) -> usize {
        self.modes.iter().filter(|m| m.label == label).count()
    }

    pub fn twist_is_stiff(&self) -> bool {
        self.count(ModeLabel::Twist) == 0 && self.twist_projection < TWIST_TOLERANCE
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    pub fn report(&self) -> ModeReport {
        ModeReport {
            singular_values: self.singular_values.clone(),
            soft_modes: self.modes.iter().map(|m| SoftModeEntry { label: m.label, sv: m.sv }).collect(),
            twist_is_stiff: self.twist_is_stiff(),
            twist_projection: self.twist_projection,
        }
    }
}

/// Serialised form written by `analyze-modes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub singular_values: Vec<f64>,
    pub soft_modes: Vec<SoftModeEntry>,
    pub twist_is_stiff: bool,
    pub twist_projection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftModeEntry {
    pub label: ModeLabel,
    pub sv: f64,
}

/// Constraint Jacobian: one row per link (`|x_a - x_b|^2`), one per node
/// (`|x_i - c|^2 - R^2`); columns are node coordinates, the sphere centre
/// and the radius.
pub fn constraint_jacobian(graph: &LinkageGraph, center: Vector3<f64>, radius: f64) -> DMatrix<f64> {
    let pts = graph.positions();
    let n = pts.len();
    let nl = graph.links.len();
    let mut j = DMatrix::zeros(nl + n, 3 * n + 4);
    for (k, &(a, b, _)) in graph.links.iter().enumerate() {
        let d = 2.0 * (pts[a] - pts[b]);
        for c in 0..3 {
            j[(k, 3 * a + c)] += d[c];
            j[(k, 3 * b + c)] -= d[c];
        }
    }
    for (i, p) in pts.iter().enumerate() {
        let d = 2.0 * (p - center);
        for c in 0..3 {
            j[(nl + i, 3 * i + c)] = d[c];
            j[(nl + i, 3 * n + c)] = -d[c];
        }
        j[(nl + i, 3 * n + 3)] = -2.0 * radius;
    }
    j
}

/// The six global rigid motions as columns.
pub fn rigid_motions(graph: &LinkageGraph, center: Vector3<f64>) -> DMatrix<f64> {
    let pts = graph.positions();
    let n = pts.len();
    let mut m = DMatrix::zeros(3 * n + 4, 6);
    for ax in 0..3 {
        let e = Vector3::ith(ax, 1.0);
        for (i, p) in pts.iter().enumerate() {
            m[(3 * i + ax, ax)] = 1.0;
            let w = e.cross(p);
            for c in 0..3 {
                m[(3 * i + c, 3 + ax)] = w[c];
            }
        }
        m[(3 * n + ax, ax)] = 1.0;
        let wc = e.cross(&center);
        for c in 0..3 {
            m[(3 * n + c, 3 + ax)] = wc[c];
        }
    }
    m
}

/// Unit twist test vector: top pole set spins about `z`, bottom set spins
/// the other way, everything else (including the sphere) stays put.
pub fn twist_test_vector(graph: &LinkageGraph) -> DVector<f64> {
    let n = graph.nodes.len();
    let mut v = DVector::zeros(3 * n + 4);
    for (set, sign) in [(&graph.pole_top, 1.0), (&graph.pole_bottom, -1.0)] {
        for &i in set.iter() {
            let w = Vector3::z().cross(&graph.node(i)) * sign;
            for c in 0..3 {
                v[3 * i + c] = w[c];
            }
        }
    }
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    }
    v
}

fn sorted_svd(j: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>), MechanismError> {
    let cols = j.ncols();
    let padded = if j.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (j.nrows(), cols)).copy_from(j);
        p
    } else {
        j.clone()
    };
    let svd = padded.try_svd(false, true, 1e-15, 10_000).ok_or_else(|| MechanismError::Svd("no convergence".into()))?;
    let vt = svd.v_t.ok_or_else(|| MechanismError::Svd("missing V".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let sv = order.iter().map(|&k| svd.singular_values[k]).collect();
    let rows = DMatrix::from_fn(order.len(), cols, |r, c| vt[(order[r], c)]);
    Ok((sv, rows))
}

/// Soft-mode spectrum of a linkage.
pub fn mobility_analysis(graph: &LinkageGraph) -> Result<ModeSpectrum, MechanismError> {
    graph.validate()?;
    let pts = graph.positions();
    let scale = pts.iter().map(|p| p.norm()).fold(0.0, f64::max).max(1.0);
    for i in 0..pts.len() {
        for k in i + 1..pts.len() {
            if (pts[i] - pts[k]).norm() <= 1e-9 * scale {
                return Err(MechanismError::DuplicateNodes(i, k));
            }
        }
    }
    let fit = cell_radius(graph)?;
    let center = Vector3::from(fit.center);
    let jac = constraint_jacobian(graph, center, fit.radius);
    let (sv, vt) = sorted_svd(&jac)?;
    let smax = sv[0];
    let null_rows: Vec<usize> = (0..sv.len()).filter(|&k| sv[k] < SOFT_THRESHOLD * smax).collect();
    let nullity = null_rows.len();
    let cols = jac.ncols();
    let null = DMatrix::from_fn(nullity, cols, |r, c| vt[(null_rows[r], c)]);

    let q = rigid_motions(graph, center).qr().q();
    let projected = &null - (&null * &q) * q.transpose();
    let soft = if nullity == 0 {
        DMatrix::zeros(0, cols)
    } else {
        let (s2, v2) = sorted_svd(&projected)?;
        let keep: Vec<usize> = (0..s2.len().min(nullity)).filter(|&k| s2[k] > 1e-6).collect();
        DMatrix::from_fn(keep.len(), cols, |r, c| v2[(keep[r], c)])
    };
    let rigid_count = nullity - soft.nrows();

    let twist = twist_test_vector(graph);
    let twist_projection = (&soft * &twist).norm();

    let labelled = classify(graph, &soft);
    let modes = labelled
        .into_iter()
        .map(|(label, v)| {
            let sv = (&jac * &v).norm();
            SoftMode { label, sv, vector: v.iter().copied().collect() }
        })
        .collect();
    Ok(ModeSpectrum { singular_values: sv, modes, rigid_count, twist_projection })
}

/// Applies a point-group element to a generalised velocity.
fn act(g: &Matrix3<f64>, perm: &[usize], v: &DVector<f64>) -> DVector<f64> {
    let n = perm.len();
    let mut w = DVector::zeros(v.len());
    for i in 0..n {
        let vi = g * Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
        for c in 0..3 {
            w[3 * perm[i] + c] = vi[c];
        }
    }
    let vc = g * Vector3::new(v[3 * n], v[3 * n + 1], v[3 * n + 2]);
    for c in 0..3 {
        w[3 * n + c] = vc[c];
    }
    w[3 * n + 3] = v[3 * n + 3];
    w
}

/// Rows of `basis` (orthonormal) rotated into the eigenbasis of the
/// symmetrised representation of `op` on their span.
fn eigen_split(basis: &DMatrix<f64>, op: impl Fn(&DVector<f64>) -> DVector<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let k = basis.nrows();
    let mut a = DMatrix::zeros(k, k);
    for r in 0..k {
        let img = op(&basis.row(r).transpose());
        for c in 0..k {
            a[(r, c)] = basis.row(c).dot(&img.transpose());
        }
    }
    let sym = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let rotated = eig.eigenvectors.transpose() * basis;
    (eig.eigenvalues.iter().copied().collect(), rotated)
}

fn select_rows(m: &DMatrix<f64>, pick: impl Fn(usize) -> bool) -> DMatrix<f64> {
    let rows: Vec<usize> = (0..m.nrows()).filter(|&r| pick(r)).collect();
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

fn classify(graph: &LinkageGraph, soft: &DMatrix<f64>) -> Vec<(ModeLabel, DVector<f64>)> {
    let as_vecs = |m: &DMatrix<f64>, label: ModeLabel| -> Vec<(ModeLabel, DVector<f64>)> {
        (0..m.nrows()).map(|r| (label, m.row(r).transpose())).collect()
    };
    if soft.nrows() == 0 {
        return Vec::new();
    }
    let pts = graph.positions();
    let tol = 1e-7 * pts.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let n_fold = graph.n_fold;
    let rot = fold_rotation(n_fold);
    let mir = mirror();
    let (Some(rperm), Some(mperm)) = (node_permutation(&pts, &rot, tol), node_permutation(&pts, &mir, tol)) else {
        return as_vecs(soft, ModeLabel::Other);
    };

    // average over the cyclic group projects onto the rotation-invariant part
    let average = |v: &DVector<f64>| {
        let mut acc = v.clone();
        let mut cur = v.clone();
        for _ in 1..n_fold {
            cur = act(&rot, &rperm, &cur);
            acc += &cur;
        }
        acc / n_fold as f64
    };
    let (w0, rot0) = eigen_split(soft, average);
    let invariant = select_rows(&rot0, |r| w0[r] > 0.5);
    let rest = select_rows(&rot0, |r| w0[r] <= 0.5);

    let mut out = Vec::new();
    if invariant.nrows() > 0 {
        let (wm, basis) = eigen_split(&invariant, |v| act(&mir, &mperm, v));
        out.extend(as_vecs(&select_rows(&basis, |r| wm[r] > 0.0), ModeLabel::Extension));
        out.extend(as_vecs(&select_rows(&basis, |r| wm[r] <= 0.0), ModeLabel::Twist));
    }
    if rest.nrows() > 0 {
        let target = (TAU / n_fold as f64).cos();
        let (wr, basis) = eigen_split(&rest, |v| act(&rot, &rperm, v));
        let harmonic = select_rows(&basis, |r| (wr[r] - target).abs() < 1e-3);
        let other = select_rows(&basis, |r| (wr[r] - target).abs() >= 1e-3);
        if harmonic.nrows() > 0 {
            let (bend, shear) = split_by_tilt(graph, &harmonic);
            out.extend(as_vecs(&bend, ModeLabel::Bending));
            out.extend(as_vecs(&shear, ModeLabel::Shear));
        }
        out.extend(as_vecs(&other, ModeLabel::Other));
    }
    out
}

/// Least-squares rigid velocity `(t, w)` with `v_i ≈ t + w × x_i` over `ids`.
fn fit_rigid(graph: &LinkageGraph, v: &DVector<f64>, ids: &[usize]) -> Vector6<f64> {
    let mut ata = Matrix6::zeros();
    let mut atb = Vector6::zeros();
    for &i in ids {
        let x = graph.node(i);
        // w × x = -[x]× w
        let skew = Matrix3::new(0.0, x.z, -x.y, -x.z, 0.0, x.x, x.y, -x.x, 0.0);
        let mut a = nalgebra::Matrix3x6::zeros();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        a.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew);
        let b = Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
        ata += a.transpose() * a;
        atb += a.transpose() * b;
    }
    ata.pseudo_inverse(1e-12).map(|p| p * atb).unwrap_or_else(|_| Vector6::zeros())
}

/// Splits the first-harmonic soft space into directions that tilt the top
/// pole set relative to the bottom one (bending) and the remainder (shear).
fn split_by_tilt(graph: &LinkageGraph, harmonic: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let h = harmonic.nrows();
    let mut tilt = DMatrix::zeros(h, 2);
    for r in 0..h {
        let v = harmonic.row(r).transpose();
        let top = fit_rigid(graph, &v, &graph.pole_top);
        let bot = fit_rigid(graph, &v, &graph.pole_bottom);
        tilt[(r, 0)] = top[3] - bot[3];
        tilt[(r, 1)] = top[4] - bot[4];
    }
    let gram = &tilt * tilt.transpose();
    let eig = SymmetricEigen::new(gram);
    let scale = eig.eigenvalues.amax().max(1e-300);
    let rotated = eig.eigenvectors.transpose() * harmonic;
    let bend = select_rows(&rotated, |r| eig.eigenvalues[r] > 1e-10 * scale.max(1.0));
    let shear = select_rows(&rotated, |r| eig.eigenvalues[r] <= 1e-10 * scale.max(1.0));
    (bend, shear)
}

/// Kinematic state of one constant-velocity joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    /// Bend angle β, rad.
    pub bend_angle: f64,
    /// Direction of the bend in the joint's xy plane, rad.
    pub bend_azimuth: f64,
    /// Signed axial extension δ, mm.
    pub extension: f64,
    pub input_phase: f64,
    pub output_phase: f64,
}

impl JointState {
    pub fn new(bend_angle: f64, bend_azimuth: f64, extension: f64) -> Self {
        JointState { bend_angle, bend_azimuth, extension, input_phase: 0.0, output_phase: 0.0 }
    }

    pub fn neutral() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    fn check(&self) -> Result<(), MechanismError> {
        if !(self.bend_angle.is_finite() && self.bend_azimuth.is_finite() && self.extension.is_finite()) {
            return Err(MechanismError::NonFinite);
        }
        if self.bend_angle.abs() > BEND_ENVELOPE {
            return Err(MechanismError::OutOfEnvelope { bend: self.bend_angle });
        }
        Ok(())
    }
}

/// Output shaft phase of an ideal constant-velocity joint, reduced to [0, 2π).
pub fn cv_transfer(state: &JointState, input_phase: f64) -> Result<f64, MechanismError> {
    state.check()?;
    if !input_phase.is_finite() {
        return Err(MechanismError::NonFinite);
    }
    Ok(input_phase.rem_euclid(TAU))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingChain {
    pub joints: Vec<JointState>,
    pub base_frame: Isometry3<f64>,
    /// Neutral axial height of each joint, mm.
    pub joint_height: f64,
}

impl CouplingChain {
    pub fn new(joints: Vec<JointState>, joint_height: f64) -> Self {
        CouplingChain { joints, base_frame: Isometry3::identity(), joint_height }
    }

    /// Chain of `count` neutral joints spanning `length`.
    pub fn neutral(count: usize, length: f64) -> Self {
        Self::new(vec![JointState::neutral(); count], length / count as f64)
    }

    /// Propagates a phase through every joint, recording each joint's phases.
    pub fn propagate(&mut self, input_phase: f64) -> Result<f64, MechanismError> {
        let mut phase = input_phase;
        for j in &mut self.joints {
            j.input_phase = phase;
            phase = cv_transfer(j, phase)?;
            j.output_phase = phase;
        }
        Ok(phase)
    }
}

/// Rigid transform across one joint: half the (extended) height, the bend
/// about an equatorial axis at the joint centre, then the other half.
pub fn joint_transform(state: &JointState, height: f64) -> Isometry3<f64> {
    let half = Translation3::new(0.0, 0.0, 0.5 * (height + state.extension));
    let axis = Unit::new_normalize(Vector3::new(-state.bend_azimuth.sin(), state.bend_azimuth.cos(), 0.0));
    let bend = UnitQuaternion::from_axis_angle(&axis, state.bend_angle);
    Isometry3::from_parts(half, UnitQuaternion::identity())
        * Isometry3::from_parts(Translation3::identity(), bend)
        * Isometry3::from_parts(half, UnitQuaternion::identity())
}

/// Distal frame of a chain: the base frame composed left to right with every
/// joint transform.
pub fn chain_pose(chain: &CouplingChain) -> Result<Isometry3<f64>, MechanismError> {
    let mut pose = chain.base_frame;
    for j in &chain.joints {
        j.check()?;
        pose *= joint_transform(j, chain.joint_height);
    }
    Ok(pose)
}

/// Two concentric chains bending and extending together.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedCoupling {
    pub inner: CouplingChain,
    pub outer: CouplingChain,
    pub friction_coupling: f64,
}

impl NestedCoupling {
    pub fn new(inner: CouplingChain, outer: CouplingChain, friction_coupling: f64) -> Result<Self, MechanismError> {
        if inner.joints.len() != outer.joints.len() {
            return Err(MechanismError::NestedMismatch("joint counts differ".into()));
        }
        for (k, (a, b)) in inner.joints.iter().zip(&outer.joints).enumerate() {
            if a.bend_angle != b.bend_angle || a.bend_azimuth != b.bend_azimuth || a.extension != b.extension {
                return Err(MechanismError::NestedMismatch(format!("joint {k} bend/extension differ")));
            }
        }
        if !(friction_coupling.is_finite() && (0.0..1.0).contains(&friction_coupling)) {
            return Err(MechanismError::NestedMismatch("friction_coupling must lie in [0, 1)".into()));
        }
        Ok(NestedCoupling { inner, outer, friction_coupling })
    }

    /// Nest two copies of `chain` with the inner column driven.
    pub fn inner_driven(chain: CouplingChain) -> Self {
        NestedCoupling { inner: chain.clone(), outer: chain, friction_coupling: INNER_DRIVEN_COUPLING }
    }

    /// Nest two copies of `chain` with the outer column driven.
    pub fn outer_driven(chain: CouplingChain) -> Self {
        NestedCoupling { inner: chain.clone(), outer: chain, friction_coupling: OUTER_DRIVEN_COUPLING }
    }
}

/// Parasitic torque on the passive column, N·mm.
pub fn nested_cross_coupling(nested: &NestedCoupling, driven_torque: f64) -> Result<f64, MechanismError> {
    if !driven_torque.is_finite() {
        return Err(MechanismError::NonFinite);
    }
    if driven_torque < 0.0 {
        return Err(MechanismError::NegativeTorque(driven_torque));
    }
    Ok(nested.friction_coupling * driven_torque)
}

/// Fraction of neutral torsional rigidity kept at axial `strain`.
pub fn rigidity_under_extension(strain: f64) -> Result<f64, MechanismError> {
    let last = RIGIDITY_TABLE[RIGIDITY_TABLE.len() - 1].0;
    if !(strain >= 0.0 && strain <= last) {
        return Err(MechanismError::StrainOutOfRange(strain));
    }
    for w in RIGIDITY_TABLE.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if strain == x0 {
            return Ok(y0);
        }
        if strain == x1 {
            return Ok(y1);
        }
        if strain < x1 {
            return Ok(y0 + (y1 - y0) * (strain - x0) / (x1 - x0));
        }
    }
    unreachable!("strain within table range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rigidity_table_is_monotone() {
        for w in RIGIDITY_TABLE.windows(2) {
            assert!(w[1].0 > w[0].0 && w[1].1 < w[0].1);
        }
    }

    #[test]
    fn default_capacities_stay_under_sensitivity() {
        assert!(INNER_DRIVEN_COUPLING * TRUSS_TORQUE_CAPACITY < CROSS_COUPLING_SENSITIVITY);
        assert!(OUTER_DRIVEN_COUPLING * EQUATORIAL_TORQUE_CAPACITY < CROSS_COUPLING_SENSITIVITY);
    }
}
