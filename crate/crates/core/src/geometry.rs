//! Small 3D helpers shared by the solver, pose and synthetic modules.

use nalgebra::{Matrix3, Vector3};

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Scales `m` to unit Frobenius norm and flips its sign so that the entry of
/// largest magnitude is positive. Returns `None` for the zero matrix.
pub fn normalize_sign_scale(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let norm = m.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let mut out = m / norm;
    let (mut best, mut best_abs) = (0.0, -1.0);
    for v in out.iter() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = *v;
        }
    }
    if best < 0.0 {
        out = -out;
    }
    Some(out)
}

/// Frobenius distance between two matrices after aligning both with
/// [`normalize_sign_scale`]; equality up to scale and sign gives zero.
pub fn distance_up_to_scale(x: &Matrix3<f64>, y: &Matrix3<f64>) -> f64 {
    match (normalize_sign_scale(x), normalize_sign_scale(y)) {
        (Some(x), Some(y)) => (x - y).norm().min((x + y).norm()),
        _ => f64::INFINITY,
    }
}

/// Rotation angle of `r` in radians, from its trace.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Angle in radians between two rotations, `angle(a^T b)`.
///
/// Uses the chordal distance, which stays accurate for tiny angles where the
/// trace formula loses precision.
pub fn rotation_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let chord = (a - b).norm() / (2.0 * std::f64::consts::SQRT_2);
    2.0 * chord.min(1.0).asin()
}

/// Angle in radians between two direction vectors.
pub fn direction_angle(u: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    let cross = u.cross(v).norm();
    let dot = u.dot(v);
    cross.atan2(dot)
}

/// Closest rotation to `m` in the Frobenius sense (polar factor).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * v_t;
    }
    r
}

/// Rotation from a unit quaternion `(s, u, v, w)` with scalar part `s`.
pub fn quaternion_rotation(s: f64, u: f64, v: f64, w: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * v * v - 2.0 * w * w,
        2.0 * u * v - 2.0 * w * s,
        2.0 * u * w + 2.0 * v * s,
        2.0 * u * v + 2.0 * w * s,
        1.0 - 2.0 * u * u - 2.0 * w * w,
        2.0 * v * w - 2.0 * u * s,
        2.0 * u * w - 2.0 * v * s,
        2.0 * v * w + 2.0 * u * s,
        1.0 - 2.0 * u * u - 2.0 * v * v,
    )
}
