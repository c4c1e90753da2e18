//! Essential matrices, their characterizing residuals, and relative pose
//! recovery with cheirality and rotation-trace checks.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::skew;
use crate::twoview::FundamentalMatrix;

/// Allowed `|tr R - tau|` before a pose is flagged as inconsistent with the
/// supplied rotation angle.
pub const TRACE_TOLERANCE: f64 = 0.05;

/// Essential matrix scaled to unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    /// Scales `m` to unit Frobenius norm. Rank is not enforced.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let n = m.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Degenerate("essential matrix is zero".into()));
        }
        Ok(EssentialMatrix(m / n))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Rotation, unit translation and the trace of the rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub tau: f64,
}

impl RelativePose {
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Self {
        RelativePose {
            r,
            t: t.normalize(),
            tau: r.trace(),
        }
    }
}

/// `E ~ K^T F K` for a camera with the same calibration in both views.
pub fn essential_from_f(f: &FundamentalMatrix, k: &Matrix3<f64>) -> Result<EssentialMatrix> {
    if k.try_inverse().is_none() {
        return Err(Error::InvalidInput("calibration matrix is singular".into()));
    }
    EssentialMatrix::new(k.transpose() * f.matrix() * k)
}

fn unit(m: &Matrix3<f64>) -> Matrix3<f64> {
    let n = m.norm();
    if n > 0.0 {
        m / n
    } else {
        *m
    }
}

/// `|| 1/2 tr(E E^T) E - E E^T E ||` for `E` scaled to unit norm. Zero exactly
/// when `E` has singular values `(s, s, 0)`.
pub fn essential_residual(e: &Matrix3<f64>) -> f64 {
    let e = unit(e);
    let eet = e * e.transpose();
    (e * (0.5 * eet.trace()) - eet * e).norm()
}

/// Coefficients `(c0, c1, c2)` of the trace constraint as a quadratic in
/// `tau`, for `E` scaled to unit norm.
pub fn trace_quadratic(e: &Matrix3<f64>) -> [f64; 3] {
    let e = unit(e);
    let a = (e * e.transpose()).trace();
    let b = (e * e).trace();
    let c = e.trace();
    [b - 0.5 * a, b - c * c, 0.5 * a]
}

/// `| 1/2 (tau^2 - 1) tr(E E^T) + (tau + 1) tr(E^2) - tau tr(E)^2 |` for `E`
/// scaled to unit norm.
pub fn trace_constraint_residual(e: &Matrix3<f64>, tau: f64) -> f64 {
    let e = unit(e);
    let a = (e * e.transpose()).trace();
    let b = (e * e).trace();
    let c = e.trace();
    (0.5 * (tau * tau - 1.0) * a + (tau + 1.0) * b - tau * c * c).abs()
}

/// Real roots of [`trace_quadratic`], ascending.
pub fn trace_quadratic_roots(e: &Matrix3<f64>) -> Vec<f64> {
    let [c0, c1, c2] = trace_quadratic(e);
    crate::roots::real_cubic_roots(c0, c1, c2, 0.0)
}

/// The twisted pair `(R_a, R_b)` and translation direction `t` (up to sign)
/// of an essential matrix.
pub fn twisted_pair(e: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>, Vector3<f64>) {
    let svd = e.svd(true, true);
    let mut u = svd.u.expect("svd u");
    let mut v_t = svd.v_t.expect("svd v_t");
    // Order singular values descending so the null direction is last.
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    u = Matrix3::from_columns(&[u.column(idx[0]), u.column(idx[1]), u.column(idx[2])]);
    v_t = Matrix3::from_rows(&[v_t.row(idx[0]), v_t.row(idx[1]), v_t.row(idx[2])]);
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let ra = u * w * v_t;
    let rb = u * w.transpose() * v_t;
    (ra, rb, u.column(2).into_owned())
}

/// Midpoint triangulation of a calibrated ray pair; returns the depths in
/// the first and second camera.
pub fn triangulate_depths(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    x1: &Vector3<f64>,
    x2: &Vector3<f64>,
) -> Option<(f64, f64)> {
    // Camera 2 centre and ray direction in camera-1 coordinates.
    let c2 = -(r.transpose() * t);
    let d1 = *x1;
    let d2 = r.transpose() * x2;
    // Minimize |l1 d1 - (c2 + l2 d2)|^2.
    let a11 = d1.dot(&d1);
    let a12 = -d1.dot(&d2);
    let a22 = d2.dot(&d2);
    let b1 = d1.dot(&c2);
    let b2 = -d2.dot(&c2);
    let det = a11 * a22 - a12 * a12;
    if det.abs() <= 1e-14 * a11 * a22 {
        return None;
    }
    let l1 = (b1 * a22 - a12 * b2) / det;
    let l2 = (a11 * b2 - a12 * b1) / det;
    let x = 0.5 * (d1 * l1 + c2 + d2 * l2);
    let y = r * x + t;
    Some((x.z, y.z))
}

/// Points in front of both cameras for the pose `(r, t)`.
pub fn positive_depth_count(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    points: &[(Vector3<f64>, Vector3<f64>)],
) -> usize {
    points
        .iter()
        .filter(|(x1, x2)| matches!(triangulate_depths(r, t, x1, x2), Some((z1, z2)) if z1 > 0.0 && z2 > 0.0))
        .count()
}

/// Output of [`decompose_essential`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub pose: RelativePose,
    /// Correspondences with positive depth in both views.
    pub positive: usize,
    pub total: usize,
    /// `tr R - tau`.
    pub trace_deviation: f64,
}

impl PoseEstimate {
    pub fn trace_consistent(&self, tolerance: f64) -> bool {
        self.trace_deviation.abs() <= tolerance
    }
}

/// Picks the `(R, t)` candidate with the most points in front of both
/// cameras. `points` are calibrated (pre-multiplied by `K^-1`).
pub fn decompose_essential(
    e: &EssentialMatrix,
    points: &[(Vector3<f64>, Vector3<f64>)],
    tau: f64,
) -> Result<PoseEstimate> {
    if points.is_empty() {
        return Err(Error::InvalidInput("pose recovery needs at least one point".into()));
    }
    let (ra, rb, t) = twisted_pair(e.matrix());
    let mut best: Option<(usize, Matrix3<f64>, Vector3<f64>)> = None;
    for r in [ra, rb] {
        for s in [t, -t] {
            let n = positive_depth_count(&r, &s, points);
            if best.as_ref().is_none_or(|b| n > b.0) {
                best = Some((n, r, s));
            }
        }
    }
    let (positive, r, t) = best.expect("four candidates");
    if 2 * positive <= points.len() {
        return Err(Error::Cheirality {
            positive,
            total: points.len(),
        });
    }
    let pose = RelativePose::new(r, t);
    Ok(PoseEstimate {
        pose,
        positive,
        total: points.len(),
        trace_deviation: pose.tau - tau,
    })
}

/// `[t]x R`.
pub fn essential_from_pose(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix3<f64> {
    skew(t) * r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{direction_angle, quaternion_rotation, rotation_distance};
    use proptest::prelude::*;

    fn unit_quaternion(v: [f64; 4]) -> [f64; 4] {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.map(|x| x / n)
    }

    fn rotation(q: [f64; 4]) -> Matrix3<f64> {
        let [s, u, v, w] = unit_quaternion(q);
        quaternion_rotation(s, u, v, w)
    }

    #[test]
    fn identity_calibration_gives_normalized_f() {
        let m = Matrix3::new(0.0, -0.3, 0.2, 0.3, 0.0, -0.9, -0.2, 0.9, 0.0);
        let f = FundamentalMatrix::new(m).unwrap();
        let e = essential_from_f(&f, &Matrix3::identity()).unwrap();
        assert!((e.matrix() - f.matrix()).norm() < 1e-15);
    }

    #[test]
    fn singular_calibration_rejected() {
        let f = FundamentalMatrix::new(skew(&Vector3::new(0.1, 0.2, 1.0))).unwrap();
        assert!(essential_from_f(&f, &Matrix3::zeros()).is_err());
    }

    #[test]
    fn essential_residual_examples() {
        let e = Matrix3::from_diagonal(&Vector3::new(1.0, 0.5, 0.0));
        // Direct evaluation: with E = diag(1, .5, 0)/n, the residual is
        // diag(s1 (s1^2 + s2^2)/2 - s1^3, s2 (s1^2 + s2^2)/2 - s2^3, 0).
        let n = (1.25f64).sqrt();
        let (s1, s2) = (1.0 / n, 0.5 / n);
        let h = 0.5 * (s1 * s1 + s2 * s2);
        let want = ((s1 * h - s1.powi(3)).powi(2) + (s2 * h - s2.powi(3)).powi(2)).sqrt();
        assert!(essential_residual(&e) > 0.0);
        assert!((essential_residual(&e) - want).abs() < 1e-15);
        assert!(essential_residual(&Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0))) < 1e-12);
    }

    #[test]
    fn pure_translation_trace_three() {
        let e = essential_from_pose(&Matrix3::identity(), &Vector3::new(0.3, -0.4, 0.5));
        assert!(trace_constraint_residual(&e, 3.0) < 1e-12);
    }

    #[test]
    fn negated_essential_gives_same_pose() {
        let r = rotation([0.95, 0.1, -0.2, 0.05]);
        let t = Vector3::new(0.2, 0.1, -0.05);
        let pts: Vec<_> = [[0.1, 0.2, 2.0], [-0.3, 0.1, 1.5], [0.2, -0.4, 2.5], [0.0, 0.0, 1.8]]
            .iter()
            .map(|p| {
                let x = Vector3::from(*p);
                let y = r * x + t;
                (x / x.z, y / y.z)
            })
            .collect();
        let e = EssentialMatrix::new(essential_from_pose(&r, &t)).unwrap();
        let neg = EssentialMatrix::new(-essential_from_pose(&r, &t)).unwrap();
        let p1 = decompose_essential(&e, &pts, r.trace()).unwrap();
        let p2 = decompose_essential(&neg, &pts, r.trace()).unwrap();
        assert!(rotation_distance(&p1.pose.r, &p2.pose.r) < 1e-12);
        assert!((p1.pose.t - p2.pose.t).norm() < 1e-12);
        assert!(rotation_distance(&p1.pose.r, &r) < 1e-9);
        assert!(direction_angle(&p1.pose.t, &t) < 1e-9);
        assert!(p1.trace_deviation.abs() < 1e-9);
    }

    #[test]
    fn cheirality_failure_when_points_behind() {
        let r = Matrix3::identity();
        let t = Vector3::new(1.0, 0.0, 0.0);
        let e = EssentialMatrix::new(essential_from_pose(&r, &t)).unwrap();
        // Parallel rays cannot be triangulated, so no candidate gets a point.
        let x = Vector3::new(0.0, 0.0, 1.0);
        let err = decompose_essential(&e, &[(x, x)], 3.0).unwrap_err();
        assert!(matches!(err, Error::Cheirality { positive: 0, total: 1 }));
    }

    proptest! {
        #[test]
        fn constraint_identities_hold_for_essential(
            q in prop::array::uniform4(-1.0f64..1.0),
            t in prop::array::uniform3(-1.0f64..1.0),
        ) {
            prop_assume!(q.iter().map(|x| x * x).sum::<f64>() > 1e-2);
            prop_assume!(t.iter().map(|x| x * x).sum::<f64>() > 1e-2);
            let r = rotation(q);
            let e = essential_from_pose(&r, &Vector3::from(t));
            prop_assert!(essential_residual(&e) <= 1e-12);
            prop_assert!(trace_constraint_residual(&e, r.trace()) <= 1e-12);
        }

        #[test]
        fn trace_residual_matches_quaternion_factorization(
            q in prop::array::uniform4(-1.0f64..1.0),
            tau in -1.0f64..3.0,
        ) {
            // For t along z and R from the unit quaternion (s, u, v, w), the
            // trace constraint of the unit-norm E = [t]x R factors as
            // 1/2 (tau + 1 - 4 s^2)(tau + 1 - 4 w^2).
            prop_assume!(q.iter().map(|x| x * x).sum::<f64>() > 1e-2);
            let [s, u, v, w] = unit_quaternion(q);
            let e = essential_from_pose(&quaternion_rotation(s, u, v, w), &Vector3::z());
            let factored = 0.5 * ((tau + 1.0 - 4.0 * s * s) * (tau + 1.0 - 4.0 * w * w)).abs();
            prop_assert!((trace_constraint_residual(&e, tau) - factored).abs() <= 1e-12);
            prop_assert!(trace_constraint_residual(&e, 4.0 * s * s - 1.0) <= 1e-12);
        }

        #[test]
        fn twisted_pair_traces_are_quadratic_roots(
            q in prop::array::uniform4(-1.0f64..1.0),
            t in prop::array::uniform3(-1.0f64..1.0),
        ) {
            prop_assume!(q.iter().map(|x| x * x).sum::<f64>() > 1e-2);
            prop_assume!(t.iter().map(|x| x * x).sum::<f64>() > 1e-2);
            let e = essential_from_pose(&rotation(q), &Vector3::from(t));
            let (ra, rb, _) = twisted_pair(&e);
            let mut want = [ra.trace(), rb.trace()];
            want.sort_by(f64::total_cmp);
            let got = trace_quadratic_roots(&e);
            // A double root (tr R_a = tr R_b) may come back once.
            prop_assert!(!got.is_empty());
            for w in want {
                prop_assert!(got.iter().any(|g| (g - w).abs() <= 1e-9), "{got:?} vs {want:?}");
            }
            for r in [ra, rb] {
                prop_assert!(trace_constraint_residual(&e, r.trace()) <= 1e-12);
            }
        }
    }

    #[test]
    fn distinct_singular_values_fail_essential_test() {
        for (s1, s2) in [(1.0, 0.5), (2.0, 0.1), (1.0, 0.8)] {
            let e = Matrix3::from_diagonal(&Vector3::new(s1, s2, 0.0));
            let r = rotation([0.3, 0.5, -0.2, 0.7]);
            assert!(essential_residual(&(r * e * r.transpose())) > 1e-3);
        }
    }
}
