//! Cell linkages on a sphere and their one-parameter auxetic expansion.
//!
//! A cell is a pin-jointed network of rigid links whose nodes sit on a common
//! sphere. Both variants are generated from a handful of node and link
//! representatives by the axial point group of order `4N` (orbifold `2*N`):
//! the `N`-fold rotation about `z`, a rotary reflection that swaps the
//! hemispheres, and a vertical mirror.
//!
//! Each hemisphere carries `N` double-arrowhead units made of a polar hub,
//! two wing nodes and a band node. The equatorial variant joins the two
//! hemispheres directly at the equator; the truss variant inserts a middle
//! row of crossed units between two lifted bands.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for matching node positions under the symmetry group.
const MATCH_TOL: f64 = 1e-7;
/// Continuation step for `expand_cell`, rad.
const CONTINUATION_STEP: f64 = 0.01;
/// Sweep step used to locate the default `gamma_max`, rad.
const SWEEP_STEP: f64 = 0.005;
/// Hard ceiling for `gamma_max`, strictly below a quarter turn.
const GAMMA_CEILING: f64 = 1.5;
const MAX_ITERATIONS: usize = 200;
const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid cell spec: {0}")]
    InvalidSpec(String),
    #[error("gamma {gamma} outside [0, {gamma_max}]")]
    GammaOutOfRange { gamma: f64, gamma_max: f64 },
    #[error("configuration solve did not converge (residual {residual:e} mm)")]
    NoConvergence { residual: f64 },
    #[error("nodes are not on a common sphere (max deviation {deviation:e} mm)")]
    NotSpherical { deviation: f64 },
    #[error("malformed linkage: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Equatorial,
    Truss,
}

impl Variant {
    /// Pole-to-pole tiling count `M` required by the variant.
    pub fn rows(self) -> usize {
        match self {
            Variant::Equatorial => 2,
            Variant::Truss => 3,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "equatorial" => Ok(Variant::Equatorial),
            "truss" => Ok(Variant::Truss),
            other => Err(GeometryError::InvalidSpec(format!("unknown variant {other:?}"))),
        }
    }
}

/// Parametric description of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub variant: Variant,
    pub n_fold: usize,
    pub m_rows: usize,
    /// Neutral sphere radius, mm.
    pub neutral_radius: f64,
    /// Link width `w`, mm. Also the self-contact clearance for `gamma_max`.
    pub link_width: f64,
    /// Link thickness `t`, mm.
    pub link_thickness: f64,
    /// Upper bound of the phase angle, rad. `None` derives it from self-contact.
    pub gamma_max: Option<f64>,
}

impl CellSpec {
    pub fn equatorial(n_fold: usize, neutral_radius: f64) -> Self {
        CellSpec {
            variant: Variant::Equatorial,
            n_fold,
            m_rows: 2,
            neutral_radius,
            link_width: 3.0,
            link_thickness: 1.5,
            gamma_max: None,
        }
    }

    pub fn truss(n_fold: usize, neutral_radius: f64) -> Self {
        CellSpec {
            variant: Variant::Truss,
            n_fold,
            m_rows: 3,
            neutral_radius,
            link_width: 2.5,
            link_thickness: 1.5,
            gamma_max: None,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidSpec(m));
        if self.n_fold < 2 {
            return bad(format!("n_fold must be at least 2, got {}", self.n_fold));
        }
        if self.m_rows != self.variant.rows() {
            return bad(format!(
                "{:?} cells need m_rows = {}, got {}",
                self.variant,
                self.variant.rows(),
                self.m_rows
            ));
        }
        if !(self.neutral_radius.is_finite() && self.neutral_radius > 0.0) {
            return bad("neutral_radius must be positive".into());
        }
        for (name, v) in [("link_width", self.link_width), ("link_thickness", self.link_thickness)] {
            if !(v.is_finite() && v > 0.0 && v < 0.5 * self.neutral_radius) {
                return bad(format!("{name} must lie in (0, neutral_radius/2)"));
            }
        }
        if let Some(g) = self.gamma_max {
            if !(g > 0.0 && g < PI / 2.0) {
                return bad(format!("gamma_max must lie in (0, pi/2), got {g}"));
            }
        }
        Ok(())
    }
}

/// Realised linkage. Links are `(node_a, node_b, rest_length)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkageGraph {
    pub nodes: Vec<[f64; 3]>,
    pub links: Vec<(usize, usize, f64)>,
    pub pins: Vec<usize>,
    pub pole_top: Vec<usize>,
    pub pole_bottom: Vec<usize>,
    pub symmetry: String,
    pub variant: Variant,
    pub n_fold: usize,
    pub m_rows: usize,
    pub neutral_radius: f64,
    pub link_width: f64,
    pub link_thickness: f64,
    /// Current phase angle, rad.
    pub gamma: f64,
    pub gamma_max: f64,
    /// Wing node whose longitude tracks the phase angle.
    pub drive_node: usize,
    /// Neutral longitude of `drive_node`, rad.
    pub drive_lon0: f64,
    /// +1 or -1 so that positive phase angles expand the cell.
    pub drive_sign: f64,
}

impl LinkageGraph {
    pub fn node(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.nodes[i])
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.nodes.iter().map(|p| Vector3::from(*p)).collect()
    }

    /// Structural checks used after deserialisation.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.nodes.len();
        let bad = |m: String| Err(GeometryError::Malformed(m));
        if n == 0 {
            return bad("no nodes".into());
        }
        if self.nodes.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite node coordinate".into());
        }
        for (k, &(a, b, l)) in self.links.iter().enumerate() {
            if a >= n || b >= n || a == b {
                return bad(format!("link {k} has invalid endpoints ({a}, {b})"));
            }
            if !(l.is_finite() && l > 0.0) {
                return bad(format!("link {k} has invalid rest length {l}"));
            }
        }
        let idx_ok = |v: &[usize]| v.iter().all(|&i| i < n);
        if !idx_ok(&self.pins) || !idx_ok(&self.pole_top) || !idx_ok(&self.pole_bottom) || self.drive_node >= n {
            return bad("node reference out of range".into());
        }
        if self.n_fold < 2 {
            return bad("n_fold must be at least 2".into());
        }
        Ok(())
    }

    /// Whether nodes `i` and `j` share a link.
    pub fn adjacency(&self) -> BTreeSet<(usize, usize)> {
        self.links.iter().map(|&(a, b, _)| (a.min(b), a.max(b))).collect()
    }
}

/// Least-squares sphere through the nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusFit {
    pub radius: f64,
    pub center: [f64; 3],
    pub max_deviation: f64,
}

fn rz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Axial point group `2*N` as a list of orthogonal matrices, identity first.
pub fn point_group(n: usize) -> Vec<Matrix3<f64>> {
    let gens = [
        rz(2.0 * PI / n as f64),
        rz(PI / n as f64) * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0)),
        Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0)),
    ];
    let mut group = vec![Matrix3::identity()];
    let mut frontier = 0;
    while frontier < group.len() {
        let g = group[frontier];
        frontier += 1;
        for h in &gens {
            let k = h * g;
            if !group.iter().any(|x| (x - k).abs().max() < 1e-12) {
                group.push(k);
            }
        }
    }
    group
}

/// Rotation by one `N`-fold step about `z`.
pub fn fold_rotation(n: usize) -> Matrix3<f64> {
    rz(2.0 * PI / n as f64)
}

/// Vertical mirror `y -> -y` used to split the symmetric modes.
pub fn mirror() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0))
}

/// For every node, the index of its image under `g`, or `None` when the
/// node set is not invariant.
pub fn node_permutation(nodes: &[Vector3<f64>], g: &Matrix3<f64>, tol: f64) -> Option<Vec<usize>> {
    nodes
        .iter()
        .map(|x| {
            let y = g * x;
            nodes.iter().position(|z| (z - y).norm() <= tol)
        })
        .collect()
}

fn sph(r: f64, colat: f64, lon: f64) -> Vector3<f64> {
    Vector3::new(r * colat.sin() * lon.cos(), r * colat.sin() * lon.sin(), r * colat.cos())
}

struct Realised {
    nodes: Vec<Vector3<f64>>,
    bars: Vec<(usize, usize)>,
}

fn realise(n: usize, r: f64, node_reps: &[Vector3<f64>], bar_reps: &[(Vector3<f64>, Vector3<f64>)]) -> Realised {
    let group = point_group(n);
    let tol = 1e-9 * r;
    let mut nodes: Vec<Vector3<f64>> = Vec::new();
    for p in node_reps {
        for g in &group {
            let q = g * p;
            if !nodes.iter().any(|x| (x - q).norm() <= tol) {
                nodes.push(q);
            }
        }
    }
    let find = |q: Vector3<f64>| nodes.iter().position(|x| (x - q).norm() <= tol).expect("bar endpoint is a node");
    let mut bars = BTreeSet::new();
    for (a, b) in bar_reps {
        for g in &group {
            let (i, j) = (find(g * a), find(g * b));
            bars.insert((i.min(j), i.max(j)));
        }
    }
    Realised { nodes, bars: bars.into_iter().collect() }
}

// Representative placement, in (colatitude, longitude) radians. Longitude
// offsets that must leave room between neighbouring units scale with 1/N.
const EQ_WING: (f64, f64) = (1.0, 0.1);
const TR_WING: (f64, f64) = (0.8, 0.25);
const TR_BAND_LIFT: f64 = 0.35;
const TR_CROSS_LIFT: f64 = 0.08;
const TR_CROSS_SPREAD: f64 = 1.2;

fn design(variant: Variant, n: usize, r: f64) -> (Realised, Vector3<f64>) {
    let nf = n as f64;
    let hub = Vector3::new(0.0, 0.0, r);
    match variant {
        Variant::Equatorial => {
            let wing = sph(r, EQ_WING.0, EQ_WING.1);
            let band = sph(r, PI / 2.0, 0.0);
            let band_south = sph(r, PI / 2.0, PI / nf);
            let real = realise(n, r, &[hub, wing, band], &[(hub, wing), (wing, band), (wing, band_south)]);
            (real, wing)
        }
        Variant::Truss => {
            let wing = sph(r, TR_WING.0, TR_WING.1);
            let band = sph(r, PI / 2.0 - TR_BAND_LIFT, 0.0);
            let ck = PI / 2.0 - TR_CROSS_LIFT;
            let dk = TR_CROSS_SPREAD / nf;
            let cross = sph(r, ck, dk);
            let cross_south = sph(r, PI - ck, PI / nf - dk);
            let cross_south_far = sph(r, PI - ck, PI / nf + dk);
            let real = realise(
                n,
                r,
                &[hub, wing, band, cross],
                &[
                    (hub, wing),
                    (wing, band),
                    (band, cross),
                    (band, cross_south),
                    (cross, cross_south_far),
                ],
            );
            (real, wing)
        }
    }
}

/// Builds the neutral linkage for `spec`.
pub fn build_cell(spec: &CellSpec) -> Result<LinkageGraph, GeometryError> {
    spec.validate()?;
    let r = spec.neutral_radius;
    let (real, wing) = design(spec.variant, spec.n_fold, r);
    let nodes = real.nodes;
    let drive_node = nodes.iter().position(|x| (x - wing).norm() <= 1e-9 * r).expect("wing node present");
    let eps = 1e-9 * r;
    let links = real.bars.iter().map(|&(a, b)| (a, b, (nodes[a] - nodes[b]).norm())).collect();
    let mut graph = LinkageGraph {
        nodes: nodes.iter().map(|p| [p.x, p.y, p.z]).collect(),
        links,
        pins: (0..nodes.len()).collect(),
        pole_top: (0..nodes.len()).filter(|&i| nodes[i].z > eps).collect(),
        pole_bottom: (0..nodes.len()).filter(|&i| nodes[i].z < -eps).collect(),
        symmetry: format!("2*{}", spec.n_fold),
        variant: spec.variant,
        n_fold: spec.n_fold,
        m_rows: spec.m_rows,
        neutral_radius: r,
        link_width: spec.link_width,
        link_thickness: spec.link_thickness,
        gamma: 0.0,
        gamma_max: 0.0,
        drive_node,
        drive_lon0: wing.y.atan2(wing.x),
        drive_sign: 1.0,
    };

    let clearance0 = min_clearance(&graph, &nodes);
    if clearance0 < spec.link_width {
        return Err(GeometryError::InvalidSpec(format!(
            "link_width {} exceeds the neutral node clearance {clearance0:.3} mm",
            spec.link_width
        )));
    }

    let reduced = Reduced::new(&graph)?;
    let u0 = reduced.initial(&graph);
    let plus = reduced.solve(&graph, &u0, SWEEP_STEP)?;
    let minus = reduced.solve(&graph, &u0, -SWEEP_STEP)?;
    graph.drive_sign = if plus[plus.len() - 1] >= minus[minus.len() - 1] { 1.0 } else { -1.0 };

    let limit = sweep_limit(&graph, &reduced, &u0)?;
    graph.gamma_max = match spec.gamma_max {
        None => limit,
        Some(g) if g <= limit => g,
        Some(g) => {
            return Err(GeometryError::InvalidSpec(format!(
                "gamma_max {g} exceeds the self-contact/monotone limit {limit:.4} rad"
            )))
        }
    };
    Ok(graph)
}

/// Walks the expansion path until the radius stops growing or two
/// non-adjacent nodes come within `link_width`; returns the last safe angle
/// one step short of the event.
fn sweep_limit(graph: &LinkageGraph, reduced: &Reduced, u0: &DVector<f64>) -> Result<f64, GeometryError> {
    let mut u = u0.clone();
    let mut radius = u0[u0.len() - 1];
    let mut gamma = 0.0;
    let mut history = vec![0.0];
    loop {
        let next = gamma + SWEEP_STEP;
        if next > GAMMA_CEILING {
            break;
        }
        let trial = match reduced.solve(graph, &u, graph.drive_sign * next) {
            Ok(t) => t,
            Err(_) => break,
        };
        let r_next = trial[trial.len() - 1];
        let pts = reduced.coords(&trial);
        if r_next <= radius || min_clearance(graph, &pts) < graph.link_width {
            break;
        }
        u = trial;
        radius = r_next;
        gamma = next;
        history.push(gamma);
    }
    // step back once so an extremum between samples stays outside the range
    let idx = history.len().saturating_sub(2);
    let g = history[idx];
    if g <= 0.0 {
        return Err(GeometryError::InvalidSpec("cell has no expansion range before self-contact".into()));
    }
    Ok(g)
}

fn min_clearance(graph: &LinkageGraph, pts: &[Vector3<f64>]) -> f64 {
    let adj = graph.adjacency();
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if !adj.contains(&(i, j)) {
                best = best.min((pts[i] - pts[j]).norm());
            }
        }
    }
    best
}

/// Moves the linkage along its expansion path to phase angle `gamma`.
pub fn expand_cell(graph: &LinkageGraph, gamma: f64) -> Result<LinkageGraph, GeometryError> {
    if !(gamma >= 0.0 && gamma <= graph.gamma_max) {
        return Err(GeometryError::GammaOutOfRange { gamma, gamma_max: graph.gamma_max });
    }
    if gamma == graph.gamma {
        return Ok(graph.clone());
    }
    let reduced = Reduced::new(graph)?;
    let mut u = reduced.initial(graph);
    let steps = ((gamma - graph.gamma).abs() / CONTINUATION_STEP).ceil().max(1.0) as usize;
    for k in 1..=steps {
        let g = graph.gamma + (gamma - graph.gamma) * k as f64 / steps as f64;
        u = reduced.solve(graph, &u, graph.drive_sign * g)?;
    }
    let pts = reduced.coords(&u);
    let mut out = graph.clone();
    out.nodes = pts.iter().map(|p| [p.x, p.y, p.z]).collect();
    out.gamma = gamma;
    Ok(out)
}

/// Least-squares sphere radius and the worst node deviation from it.
pub fn cell_radius(graph: &LinkageGraph) -> Result<RadiusFit, GeometryError> {
    let pts = graph.positions();
    if pts.len() < 4 {
        return Err(GeometryError::Malformed("need at least 4 nodes for a sphere fit".into()));
    }
    let mut a = DMatrix::zeros(pts.len(), 4);
    let mut b = DVector::zeros(pts.len());
    for (i, p) in pts.iter().enumerate() {
        a[(i, 0)] = 2.0 * p.x;
        a[(i, 1)] = 2.0 * p.y;
        a[(i, 2)] = 2.0 * p.z;
        a[(i, 3)] = 1.0;
        b[i] = p.norm_squared();
    }
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| GeometryError::Malformed(e.to_string()))?;
    let c = Vector3::new(sol[0], sol[1], sol[2]);
    let radius = (sol[3] + c.norm_squared()).sqrt();
    let max_deviation = pts.iter().map(|p| ((p - c).norm() - radius).abs()).fold(0.0, f64::max);
    if !radius.is_finite() || max_deviation > 1e-6 * radius {
        return Err(GeometryError::NotSpherical { deviation: max_deviation });
    }
    Ok(RadiusFit { radius, center: [c.x, c.y, c.z], max_deviation })
}

/// The configuration space restricted to the full point group: one block of
/// free coordinates per node orbit (the fixed space of its stabiliser) plus
/// the sphere radius. Link-length, sphere and drive equations make it square.
struct Reduced {
    node_orbit: Vec<usize>,
    node_op: Vec<Matrix3<f64>>,
    orbit_rep: Vec<usize>,
    basis: Vec<Vec<Vector3<f64>>>,
    offset: Vec<usize>,
    bar_reps: Vec<(usize, usize, f64)>,
    dim: usize,
}

impl Reduced {
    fn new(graph: &LinkageGraph) -> Result<Self, GeometryError> {
        let pts = graph.positions();
        let n = pts.len();
        let group = point_group(graph.n_fold);
        let tol = MATCH_TOL * graph.neutral_radius;
        let perms: Vec<Vec<usize>> = group
            .iter()
            .map(|g| node_permutation(&pts, g, tol))
            .collect::<Option<_>>()
            .ok_or_else(|| GeometryError::Malformed("node set is not invariant under 2*N".into()))?;

        let mut node_orbit = vec![usize::MAX; n];
        let mut node_op = vec![Matrix3::identity(); n];
        let mut orbit_rep = Vec::new();
        let mut basis = Vec::new();
        for i in 0..n {
            if node_orbit[i] != usize::MAX {
                continue;
            }
            let k = orbit_rep.len();
            orbit_rep.push(i);
            for (g, perm) in group.iter().zip(&perms) {
                let j = perm[i];
                if node_orbit[j] == usize::MAX {
                    node_orbit[j] = k;
                    node_op[j] = *g;
                }
            }
            let mut ata = Matrix3::zeros();
            for (g, perm) in group.iter().zip(&perms) {
                if perm[i] == i {
                    let d = g - Matrix3::identity();
                    ata += d.transpose() * d;
                }
            }
            basis.push(fixed_space(&ata));
        }
        let mut offset = Vec::with_capacity(basis.len());
        let mut dim = 0;
        for b in &basis {
            offset.push(dim);
            dim += b.len();
        }

        let index: HashMap<(usize, usize), usize> =
            graph.links.iter().enumerate().map(|(k, &(a, b, _))| ((a.min(b), a.max(b)), k)).collect();
        let mut seen = vec![false; graph.links.len()];
        let mut bar_reps = Vec::new();
        for (k, &(a, b, l)) in graph.links.iter().enumerate() {
            if seen[k] {
                continue;
            }
            bar_reps.push((a, b, l));
            for perm in &perms {
                let (i, j) = (perm[a], perm[b]);
                match index.get(&(i.min(j), i.max(j))) {
                    Some(&m) => seen[m] = true,
                    None => return Err(GeometryError::Malformed("link set is not invariant under 2*N".into())),
                }
            }
        }
        Ok(Reduced { node_orbit, node_op, orbit_rep, basis, offset, bar_reps, dim })
    }

    fn initial(&self, graph: &LinkageGraph) -> DVector<f64> {
        let mut u = DVector::zeros(self.dim + 1);
        for (k, &i) in self.orbit_rep.iter().enumerate() {
            let p = self.node_op[i].transpose() * graph.node(i);
            for (c, e) in self.basis[k].iter().enumerate() {
                u[self.offset[k] + c] = e.dot(&p);
            }
        }
        u[self.dim] = graph.node(graph.drive_node).norm();
        u
    }

    fn rep_point(&self, u: &DVector<f64>, k: usize) -> Vector3<f64> {
        self.basis[k].iter().enumerate().fold(Vector3::zeros(), |acc, (c, e)| acc + e * u[self.offset[k] + c])
    }

    fn coords(&self, u: &DVector<f64>) -> Vec<Vector3<f64>> {
        let reps: Vec<_> = (0..self.basis.len()).map(|k| self.rep_point(u, k)).collect();
        (0..self.node_orbit.len()).map(|i| self.node_op[i] * reps[self.node_orbit[i]]).collect()
    }

    /// Adds `row · d(node i)/du` into `jac[r, ..]`.
    fn scatter(&self, jac: &mut DMatrix<f64>, r: usize, i: usize, row: &Vector3<f64>) {
        let k = self.node_orbit[i];
        let pulled = self.node_op[i].transpose() * row;
        for (c, e) in self.basis[k].iter().enumerate() {
            jac[(r, self.offset[k] + c)] += pulled.dot(e);
        }
    }

    fn system(&self, graph: &LinkageGraph, u: &DVector<f64>, drive: f64) -> (DVector<f64>, DMatrix<f64>) {
        let pts = self.coords(u);
        let radius = u[self.dim];
        let rows = self.bar_reps.len() + self.orbit_rep.len() + 1;
        let mut f = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, self.dim + 1);
        let mut r = 0;
        for &(a, b, l) in &self.bar_reps {
            let d = pts[a] - pts[b];
            let len = d.norm();
            f[r] = len - l;
            let e = d / len;
            self.scatter(&mut jac, r, a, &e);
            self.scatter(&mut jac, r, b, &(-e));
            r += 1;
        }
        for &i in &self.orbit_rep {
            let len = pts[i].norm();
            f[r] = len - radius;
            self.scatter(&mut jac, r, i, &(pts[i] / len));
            jac[(r, self.dim)] = -1.0;
            r += 1;
        }
        let p = pts[graph.drive_node];
        let scale = graph.neutral_radius;
        let lon = p.y.atan2(p.x);
        f[r] = scale * wrap_angle(lon - graph.drive_lon0 - drive);
        let rho2 = p.x * p.x + p.y * p.y;
        self.scatter(&mut jac, r, graph.drive_node, &(Vector3::new(-p.y, p.x, 0.0) * (scale / rho2)));
        (f, jac)
    }

    /// Damped least squares onto the constraint manifold at drive angle
    /// `drive` (signed), starting from `u0`.
    fn solve(&self, graph: &LinkageGraph, u0: &DVector<f64>, drive: f64) -> Result<DVector<f64>, GeometryError> {
        let mut u = u0.clone();
        let (mut f, mut jac) = self.system(graph, &u, drive);
        let mut cost = f.norm_squared();
        let mut mu = 1e-9;
        for _ in 0..MAX_ITERATIONS {
            if f.amax() < RESIDUAL_TOL {
                return Ok(u);
            }
            let jt = jac.transpose();
            let mut lhs = &jt * &jac;
            let scale = lhs.diagonal().max().max(1e-300);
            for d in 0..lhs.nrows() {
                lhs[(d, d)] += mu * scale;
            }
            let rhs = -(&jt * &f);
            let step = match lhs.cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    mu *= 10.0;
                    continue;
                }
            };
            let trial = &u + step;
            let (f2, j2) = self.system(graph, &trial, drive);
            let c2 = f2.norm_squared();
            if c2 < cost {
                u = trial;
                f = f2;
                jac = j2;
                cost = c2;
                mu = (mu / 3.0).max(1e-15);
            } else {
                mu *= 4.0;
            }
        }
        if f.amax() < RESIDUAL_TOL {
            Ok(u)
        } else {
            Err(GeometryError::NoConvergence { residual: f.amax() })
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Orthonormal basis of the null space of a symmetric 3x3 matrix, with a
/// sign convention that makes the result deterministic.
fn fixed_space(ata: &Matrix3<f64>) -> Vec<Vector3<f64>> {
    let eig = SymmetricEigen::new(*ata);
    let mut out: Vec<(f64, Vector3<f64>)> = (0..3)
        .filter(|&c| eig.eigenvalues[c].abs() < 1e-9)
        .map(|c| {
            let mut v: Vector3<f64> = eig.eigenvectors.column(c).into();
            let big = v.iamax();
            if v[big] < 0.0 {
                v = -v;
            }
            (v.iamax() as f64, v)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    if out.len() == 3 {
        return vec![Vector3::x(), Vector3::y(), Vector3::z()];
    }
    out.into_iter().map(|(_, v)| v).collect()
}
