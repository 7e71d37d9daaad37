//! Reachable-workspace reconstruction: 3D Delaunay tetrahedralization,
//! alpha-shape filtering and orientation subsets.
//!
//! The triangulation is incremental Bowyer–Watson with exact predicates and
//! "ghost" cells joined to a vertex at infinity, so the convex hull is
//! recovered exactly instead of depending on a bounding super-simplex.
//! Inputs are first moved by a deterministic jitter of at most 1e-9 mm
//! keyed by each point's lexicographic rank, which breaks the ties that
//! grids and other synthetic inputs produce. Volumes are always evaluated
//! on the original coordinates.

use std::collections::HashMap;

use robust::{orient3d, Coord3D};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quat::{self, Quat};
use crate::sampling::DatasetRow;

pub const JITTER_MM: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkspaceError {
    #[error("need at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("input points are coplanar or collinear")]
    Degenerate,
    #[error("non-finite point at index {0}")]
    NonFinite(usize),
    #[error("alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("quaternion norm {0} is not 1 within 1e-6")]
    NonUnitQuaternion(f64),
    #[error("empty dataset")]
    EmptyDataset,
}

const INF: u32 = u32::MAX;
const NONE: u32 = u32::MAX;

/// Outward-facing vertex triples of a positively oriented tetrahedron,
/// indexed by the opposite vertex.
pub const FACES: [[usize; 3]; 4] = [[1, 3, 2], [0, 2, 3], [0, 3, 1], [0, 1, 2]];

#[derive(Debug, Clone, Copy)]
struct Cell {
    v: [u32; 4],
    n: [u32; 4],
    alive: bool,
}

impl Cell {
    fn is_ghost(&self) -> bool {
        self.v.contains(&INF)
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lex_cmp(a: &[f64; 3], b: &[f64; 3]) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2]))
}

/// Deterministic sub-nanometre perturbation keyed by lexicographic rank.
pub fn jitter(points: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]).then(a.cmp(&b)));
    let mut out = points.to_vec();
    for (rank, &i) in order.iter().enumerate() {
        for k in 0..3 {
            let h = splitmix((rank as u64) * 3 + k as u64);
            let u = (h >> 11) as f64 / (1u64 << 53) as f64;
            out[i][k] += JITTER_MM * (2.0 * u - 1.0);
        }
    }
    out
}

fn c3(p: &[f64; 3]) -> Coord3D<f64> {
    Coord3D { x: p[0], y: p[1], z: p[2] }
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Signed volume, positive for the orientation used by the triangulation.
pub fn signed_volume(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3], d: &[f64; 3]) -> f64 {
    // robust::orient3d is positive when d lies below abc, i.e. opposite to (b-a)x(c-a)
    -dot(&cross(&sub(b, a), &sub(c, a)), &sub(d, a)) / 6.0
}

/// Circumradius; infinite for flat tetrahedra.
pub fn circumradius(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3], d: &[f64; 3]) -> f64 {
    let (u, v, w) = (sub(b, a), sub(c, a), sub(d, a));
    let det = dot(&u, &cross(&v, &w));
    if det == 0.0 {
        return f64::INFINITY;
    }
    let (uu, vv, ww) = (dot(&u, &u), dot(&v, &v), dot(&w, &w));
    let vw = cross(&v, &w);
    let wu = cross(&w, &u);
    let uv = cross(&u, &v);
    let num: [f64; 3] = std::array::from_fn(|k| uu * vw[k] + vv * wu[k] + ww * uv[k]);
    let r = dot(&num, &num).sqrt() / (2.0 * det.abs());
    if r.is_finite() {
        r
    } else {
        f64::INFINITY
    }
}

fn morton_key(p: &[f64; 3], lo: &[f64; 3], scale: f64) -> u64 {
    let mut key = 0u64;
    let q: [u64; 3] = std::array::from_fn(|k| (((p[k] - lo[k]) * scale).clamp(0.0, 2097151.0)) as u64);
    for bit in (0..21).rev() {
        for c in q {
            key = (key << 1) | ((c >> bit) & 1);
        }
    }
    key
}

/// Delaunay tetrahedralization of a point set.
#[derive(Debug, Clone)]
pub struct Delaunay {
    /// Original coordinates.
    pub points: Vec<[f64; 3]>,
    perturbed: Vec<[f64; 3]>,
    cells: Vec<Cell>,
}

struct Builder<'a> {
    p: &'a [[f64; 3]],
    cells: Vec<Cell>,
    free: Vec<u32>,
    last: u32,
    rng: u64,
    mark: Vec<u32>,
    stamp: u32,
}

impl<'a> Builder<'a> {
    fn pt(&self, v: u32) -> Coord3D<f64> {
        c3(&self.p[v as usize])
    }

    /// Orientation of cell `t` with vertex `i` replaced by `q`.
    fn orient_with(&self, t: u32, i: usize, q: u32) -> f64 {
        let mut v = self.cells[t as usize].v;
        v[i] = q;
        orient3d(self.pt(v[0]), self.pt(v[1]), self.pt(v[2]), self.pt(v[3]))
    }

    fn in_conflict(&self, t: u32, q: u32) -> bool {
        let c = &self.cells[t as usize];
        if let Some(k) = c.v.iter().position(|&x| x == INF) {
            let o = self.orient_with(t, k, q);
            if o != 0.0 {
                return o > 0.0;
            }
            let nb = c.n[k];
            return !self.cells[nb as usize].is_ghost() && self.insphere(nb, q);
        }
        self.insphere(t, q)
    }

    fn insphere(&self, t: u32, q: u32) -> bool {
        let v = self.cells[t as usize].v;
        robust::insphere(self.pt(v[0]), self.pt(v[1]), self.pt(v[2]), self.pt(v[3]), self.pt(q)) > 0.0
    }

    fn next_rand(&mut self) -> usize {
        self.rng = splitmix(self.rng);
        (self.rng >> 33) as usize
    }

    fn alloc(&mut self, c: Cell) -> u32 {
        if let Some(i) = self.free.pop() {
            self.cells[i as usize] = c;
            i
        } else {
            self.cells.push(c);
            (self.cells.len() - 1) as u32
        }
    }

    fn locate(&mut self, q: u32) -> u32 {
        let mut t = self.last;
        if self.cells[t as usize].is_ghost() {
            let k = self.cells[t as usize].v.iter().position(|&x| x == INF).unwrap();
            t = self.cells[t as usize].n[k];
        }
        let mut prev = NONE;
        'walk: loop {
            if self.cells[t as usize].is_ghost() {
                return t;
            }
            let start = self.next_rand() % 4;
            for j in 0..4 {
                let i = (start + j) % 4;
                let nb = self.cells[t as usize].n[i];
                if nb == prev {
                    continue;
                }
                if self.orient_with(t, i, q) < 0.0 {
                    prev = t;
                    t = nb;
                    continue 'walk;
                }
            }
            return t;
        }
    }

    fn insert(&mut self, q: u32) {
        let start = self.locate(q);
        self.stamp += 1;
        let stamp = self.stamp;
        if self.mark.len() < self.cells.len() {
            self.mark.resize(self.cells.len(), 0);
        }
        let mut cavity = vec![start];
        self.mark[start as usize] = stamp;
        // boundary faces: (cavity cell, opposite vertex index, outside neighbour)
        let mut boundary: Vec<(u32, usize, u32)> = Vec::new();
        let mut k = 0;
        while k < cavity.len() {
            let t = cavity[k];
            k += 1;
            for i in 0..4 {
                let nb = self.cells[t as usize].n[i];
                if self.mark[nb as usize] == stamp {
                    continue;
                }
                if self.mark[nb as usize] != stamp.wrapping_neg() && self.in_conflict(nb, q) {
                    self.mark[nb as usize] = stamp;
                    cavity.push(nb);
                } else {
                    // remember the negative verdict for this insertion
                    self.mark[nb as usize] = stamp.wrapping_neg();
                    boundary.push((t, i, nb));
                }
            }
        }
        let mut created = Vec::with_capacity(boundary.len());
        for &(t, i, nb) in &boundary {
            let mut v = self.cells[t as usize].v;
            v[i] = q;
            let mut n = [NONE; 4];
            n[i] = nb;
            let id = self.alloc(Cell { v, n, alive: true });
            if self.mark.len() < self.cells.len() {
                self.mark.resize(self.cells.len(), 0);
            }
            let slot = self.cells[nb as usize].n.iter().position(|&x| x == t).unwrap();
            self.cells[nb as usize].n[slot] = id;
            created.push((id, i));
        }
        // glue new cells along their faces through q
        let mut edges: Vec<((u32, u32), u32, usize)> = Vec::with_capacity(created.len() * 3);
        for &(id, iq) in &created {
            let v = self.cells[id as usize].v;
            for j in (0..4).filter(|&j| j != iq) {
                let others: Vec<u32> = (0..4).filter(|&m| m != j && m != iq).map(|m| v[m]).collect();
                let key = (others[0].min(others[1]), others[0].max(others[1]));
                edges.push((key, id, j));
            }
        }
        edges.sort_unstable_by_key(|e| e.0);
        for pair in edges.chunks(2) {
            debug_assert!(pair.len() == 2 && pair[0].0 == pair[1].0);
            let (a, ja) = (pair[0].1, pair[0].2);
            let (b, jb) = (pair[1].1, pair[1].2);
            self.cells[a as usize].n[ja] = b;
            self.cells[b as usize].n[jb] = a;
        }
        for &t in &cavity {
            self.cells[t as usize].alive = false;
            self.mark[t as usize] = 0;
            self.free.push(t);
        }
        for &(_, _, nb) in &boundary {
            self.mark[nb as usize] = 0;
        }
        self.last = created.iter().map(|c| c.0).find(|&c| !self.cells[c as usize].is_ghost()).unwrap_or(created[0].0);
    }
}

impl Delaunay {
    pub fn new(points: &[[f64; 3]]) -> Result<Self, WorkspaceError> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(WorkspaceError::NonFinite(i));
        }
        if points.len() < 4 {
            return Err(WorkspaceError::TooFewPoints(points.len()));
        }
        let seed = initial_simplex(points)?;
        let perturbed = jitter(points);
        let p = &perturbed;

        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for q in p {
            for k in 0..3 {
                lo[k] = lo[k].min(q[k]);
                hi[k] = hi[k].max(q[k]);
            }
        }
        let span = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let scale = 2097151.0 / span;
        let mut order: Vec<u32> = (0..p.len() as u32).filter(|i| !seed.contains(&(*i as usize))).collect();
        order.sort_by_key(|&i| (morton_key(&p[i as usize], &lo, scale), i));

        let mut s = seed.map(|i| i as u32);
        let o = orient3d(c3(&p[s[0] as usize]), c3(&p[s[1] as usize]), c3(&p[s[2] as usize]), c3(&p[s[3] as usize]));
        if o < 0.0 {
            s.swap(0, 1);
        }
        let mut b = Builder { p, cells: Vec::new(), free: Vec::new(), last: 0, rng: 0x5eed, mark: Vec::new(), stamp: 0 };
        // cell 0 is finite, cell 1 + i is the ghost across face i. Ghosts are
        // oriented so that putting an outside point in place of the infinite
        // vertex gives a positive tetrahedron, hence the swap of two finite slots.
        b.cells.push(Cell { v: s, n: [1, 2, 3, 4], alive: true });
        for i in 0..4 {
            let mut orig = [0usize, 1, 2, 3];
            let (x, y) = match i {
                0 => (1, 2),
                _ => (0, if i == 1 { 2 } else { 1 }),
            };
            orig.swap(x, y);
            let v = std::array::from_fn(|pos| if pos == i { INF } else { s[orig[pos]] });
            let n = std::array::from_fn(|pos| if pos == i { 0 } else { (1 + orig[pos]) as u32 });
            b.cells.push(Cell { v, n, alive: true });
        }
        for q in order {
            b.insert(q);
        }
        let cells = b.cells;
        Ok(Delaunay { points: points.to_vec(), perturbed, cells })
    }

    /// Finite tetrahedra with positive orientation.
    pub fn tetrahedra(&self) -> Vec<[usize; 4]> {
        self.cells.iter().filter(|c| c.alive && !c.is_ghost()).map(|c| c.v.map(|v| v as usize)).collect()
    }

    /// Alpha complex: tetrahedra with circumradius ≤ `alpha`.
    pub fn alpha_shape(&self, alpha: f64) -> Result<AlphaHull, WorkspaceError> {
        if !(alpha > 0.0) {
            return Err(WorkspaceError::InvalidAlpha(alpha));
        }
        let ids: Vec<usize> = (0..self.cells.len()).filter(|&i| self.cells[i].alive && !self.cells[i].is_ghost()).collect();
        let mut accepted = vec![false; self.cells.len()];
        for &i in &ids {
            let v = self.cells[i].v.map(|x| &self.perturbed[x as usize]);
            accepted[i] = circumradius(v[0], v[1], v[2], v[3]) <= alpha;
        }
        let mut tetrahedra = Vec::new();
        let mut boundary_triangles = Vec::new();
        let mut volume_mm3 = 0.0;
        for &i in &ids {
            if !accepted[i] {
                continue;
            }
            let c = &self.cells[i];
            let v = c.v.map(|x| x as usize);
            volume_mm3 += signed_volume(&self.points[v[0]], &self.points[v[1]], &self.points[v[2]], &self.points[v[3]]);
            tetrahedra.push(v);
            for f in 0..4 {
                if !accepted[c.n[f] as usize] {
                    boundary_triangles.push(FACES[f].map(|k| v[k]));
                }
            }
        }
        Ok(AlphaHull { alpha, points: self.points.clone(), tetrahedra, boundary_triangles, volume: volume_mm3 / 1000.0 })
    }

    /// Largest circumradius among finite tetrahedra.
    pub fn max_circumradius(&self) -> f64 {
        self.tetrahedra()
            .iter()
            .map(|v| circumradius(&self.perturbed[v[0]], &self.perturbed[v[1]], &self.perturbed[v[2]], &self.perturbed[v[3]]))
            .fold(0.0, f64::max)
    }
}

/// Picks four affinely independent points or reports degeneracy. Uses a
/// relative tolerance so that nearly flat clouds are rejected too.
fn initial_simplex(p: &[[f64; 3]]) -> Result<[usize; 4], WorkspaceError> {
    let a = (0..p.len()).min_by(|&i, &j| lex_cmp(&p[i], &p[j])).unwrap();
    let far = |from: &dyn Fn(usize) -> f64| (0..p.len()).max_by(|&i, &j| from(i).total_cmp(&from(j)).then(j.cmp(&i))).unwrap();
    let b = far(&|i| {
        let d = sub(&p[i], &p[a]);
        dot(&d, &d)
    });
    let ab = sub(&p[b], &p[a]);
    let diam = dot(&ab, &ab).sqrt();
    if diam == 0.0 {
        return Err(WorkspaceError::Degenerate);
    }
    let c = far(&|i| {
        let x = cross(&ab, &sub(&p[i], &p[a]));
        dot(&x, &x)
    });
    let n = cross(&ab, &sub(&p[c], &p[a]));
    if n.iter().all(|v| *v == 0.0) || dot(&n, &n).sqrt() < 1e-12 * diam * diam {
        return Err(WorkspaceError::Degenerate);
    }
    let d = far(&|i| dot(&n, &sub(&p[i], &p[a])).abs());
    if dot(&n, &sub(&p[d], &p[a])).abs() < 1e-12 * diam * diam * diam {
        return Err(WorkspaceError::Degenerate);
    }
    Ok([a, b, c, d])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaHull {
    pub alpha: f64,
    pub points: Vec<[f64; 3]>,
    pub tetrahedra: Vec<[usize; 4]>,
    /// Outward-oriented boundary faces.
    pub boundary_triangles: Vec<[usize; 3]>,
    /// cm³.
    pub volume: f64,
}

impl AlphaHull {
    pub fn volume_mm3(&self) -> f64 {
        self.volume * 1000.0
    }

    pub fn is_empty(&self) -> bool {
        self.tetrahedra.is_empty()
    }

    /// Every directed boundary edge is matched by its reverse as often as it
    /// occurs. Holds for any closed oriented surface, including the
    /// non-manifold edges and vertices alpha complexes can have.
    pub fn is_watertight(&self) -> bool {
        let mut count: HashMap<(usize, usize), i64> = HashMap::new();
        for t in &self.boundary_triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += if a < b { 1 } else { -1 };
            }
        }
        count.values().all(|&c| c == 0)
    }

    /// Number of boundary triangles on each undirected boundary edge.
    pub fn edge_valence(&self) -> HashMap<(usize, usize), usize> {
        let mut count = HashMap::new();
        for t in &self.boundary_triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count
    }

    /// Boundary as a compact vertex/face list for mesh export.
    pub fn boundary_mesh(&self) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
        let mut remap = HashMap::new();
        let mut verts = Vec::new();
        let faces = self
            .boundary_triangles
            .iter()
            .map(|t| {
                t.map(|v| {
                    *remap.entry(v).or_insert_with(|| {
                        verts.push(self.points[v]);
                        verts.len() - 1
                    })
                })
            })
            .collect();
        (verts, faces)
    }
}

pub fn alpha_shape(points: &[[f64; 3]], alpha: f64) -> Result<AlphaHull, WorkspaceError> {
    if !(alpha > 0.0) {
        return Err(WorkspaceError::InvalidAlpha(alpha));
    }
    Delaunay::new(points)?.alpha_shape(alpha)
}

/// Diameter of a planar point set via its convex hull.
pub fn planar_diameter(points: &[[f64; 2]]) -> f64 {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 2 {
        return 0.0;
    }
    let turn = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| {
        robust::orient2d(robust::Coord { x: o[0], y: o[1] }, robust::Coord { x: a[0], y: a[1] }, robust::Coord { x: b[0], y: b[1] })
    };
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for q in iter {
            while hull.len() >= start + 2 && turn(&hull[hull.len() - 2], &hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(*q);
        }
        hull.pop();
    }
    let mut best: f64 = 0.0;
    for i in 0..hull.len() {
        for j in i + 1..hull.len() {
            best = best.max((hull[i][0] - hull[j][0]).hypot(hull[i][1] - hull[j][1]));
        }
    }
    best
}

/// Tilt of the tool axis from vertical, degrees: the angle between z and
/// R(q)·z. Rejects quaternions whose norm is off by more than 1e-6.
pub fn orientation_angle(q: &Quat) -> Result<f64, WorkspaceError> {
    let n = quat::norm(q);
    if !((n - 1.0).abs() <= 1e-6) {
        return Err(WorkspaceError::NonUnitQuaternion(n));
    }
    Ok(tilt(q))
}

fn tilt(q: &Quat) -> f64 {
    let n2 = q.iter().map(|c| c * c).sum::<f64>();
    let zz = 1.0 - 2.0 * (q[1] * q[1] + q[2] * q[2]) / n2;
    zz.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Tilt bands for the end effector relative to the ground normal, degrees.
pub mod bands {
    pub const PERPENDICULAR: (f64, f64) = (0.0, 15.0);
    pub const PARTIALLY_TILTED: (f64, f64) = (30.0, 60.0);
    pub const PARALLEL: (f64, f64) = (75.0, 90.0);
}

/// Rows whose tilt lies in `[lo, hi]`.
pub fn filter_by_tilt(rows: &[DatasetRow], band: (f64, f64)) -> Vec<DatasetRow> {
    rows.iter().filter(|r| (band.0..=band.1).contains(&tilt(&r.pose.orientation))).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceMetrics {
    pub volume_cm3: f64,
    pub xy_diameter_mm: f64,
    pub max_compression_mm: f64,
    pub max_tilt_deg: f64,
}

/// Compression below neutral length and largest tilt over a dataset.
pub fn dataset_extremes(rows: &[DatasetRow], neutral_length: f64) -> Result<(f64, f64), WorkspaceError> {
    if rows.is_empty() {
        return Err(WorkspaceError::EmptyDataset);
    }
    let zmin = rows.iter().map(|r| r.pose.position[2]).fold(f64::INFINITY, f64::min);
    let max_tilt = rows.iter().map(|r| tilt(&r.pose.orientation)).fold(0.0, f64::max);
    Ok((neutral_length - zmin, max_tilt))
}

pub fn workspace_metrics(hull: &AlphaHull, rows: &[DatasetRow], neutral_length: f64) -> Result<WorkspaceMetrics, WorkspaceError> {
    let (max_compression_mm, max_tilt_deg) = dataset_extremes(rows, neutral_length)?;
    let (verts, _) = hull.boundary_mesh();
    let xy: Vec<[f64; 2]> = verts.iter().map(|p| [p[0], p[1]]).collect();
    Ok(WorkspaceMetrics { volume_cm3: hull.volume, xy_diameter_mm: planar_diameter(&xy), max_compression_mm, max_tilt_deg })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn face_table_is_outward() {
        let p = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let mut v = [0, 1, 2, 3];
        if orient3d(c3(&p[0]), c3(&p[1]), c3(&p[2]), c3(&p[3])) < 0.0 {
            v.swap(0, 1);
        }
        assert!(signed_volume(&p[v[0]], &p[v[1]], &p[v[2]], &p[v[3]]) > 0.0);
        let centroid = [0.25; 3];
        for (i, f) in FACES.iter().enumerate() {
            let (a, b, c) = (p[v[f[0]]], p[v[f[1]]], p[v[f[2]]]);
            let normal = cross(&sub(&b, &a), &sub(&c, &a));
            assert!(dot(&normal, &sub(&a, &centroid)) > 0.0, "face {i}");
        }
    }

    #[test]
    fn jitter_is_tiny_and_order_free() {
        let p = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let j = jitter(&p);
        for (a, b) in p.iter().zip(&j) {
            assert!((0..3).all(|k| (a[k] - b[k]).abs() <= JITTER_MM));
        }
        assert_ne!(j[0], j[2]);
        let rev: Vec<_> = p.iter().rev().cloned().collect();
        let jr = jitter(&rev);
        assert_eq!(jr[1], j[1]);
    }
}
