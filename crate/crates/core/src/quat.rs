//! Quaternion helpers on `[w, x, y, z]` arrays, the layout used in files.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

pub type Quat = [f64; 4];

pub const IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn norm(q: &Quat) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Flips `q` into the `w >= 0` hemisphere. For `w == 0` the first nonzero
/// vector component is made positive so the choice is still unique.
pub fn canonical(q: Quat) -> Quat {
    let flip = if q[0] != 0.0 { q[0] < 0.0 } else { q[1..].iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0) };
    if flip {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}

/// Normalized and canonical.
pub fn normalize(q: Quat) -> Quat {
    let n = norm(&q);
    canonical([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

pub fn to_unit(q: &Quat) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

pub fn from_unit(u: &UnitQuaternion<f64>) -> Quat {
    canonical([u.w, u.i, u.j, u.k])
}

pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Quat {
    from_unit(&UnitQuaternion::from_scaled_axis(axis.normalize() * angle))
}

pub fn dot(a: &Quat, b: &Quat) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Geodesic distance `2·acos|<a, b>|` in radians; double-cover safe.
///
/// Evaluated as `4·atan2(|a - b|, |a + b|)` after aligning signs, which is
/// exactly zero for equal inputs and accurate for small angles.
pub fn angular_distance(a: &Quat, b: &Quat) -> f64 {
    let s = if dot(a, b) < 0.0 { -1.0 } else { 1.0 };
    let diff = norm(&[0, 1, 2, 3].map(|i| a[i] - s * b[i]));
    let sum = norm(&[0, 1, 2, 3].map(|i| a[i] + s * b[i]));
    (4.0 * diff.atan2(sum)).min(std::f64::consts::PI)
}

/// Spherical linear interpolation along the shorter arc. Falls back to
/// normalized lerp when the endpoints nearly coincide.
pub fn slerp(q0: &Quat, q1: &Quat, t: f64) -> Quat {
    let mut d = dot(q0, q1);
    let mut b = *q1;
    if d < 0.0 {
        d = -d;
        b = b.map(|c| -c);
    }
    if t == 0.0 {
        return *q0;
    }
    if t == 1.0 {
        return *q1;
    }
    let (wa, wb) = if d > 1.0 - 1e-12 {
        (1.0 - t, t)
    } else {
        let omega = d.min(1.0).acos();
        let s = omega.sin();
        (((1.0 - t) * omega).sin() / s, (t * omega).sin() / s)
    };
    let q = [0, 1, 2, 3].map(|i| wa * q0[i] + wb * b[i]);
    let n = norm(&q);
    q.map(|c| c / n)
}
