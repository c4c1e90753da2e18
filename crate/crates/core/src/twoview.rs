//! Point normalization and fundamental matrix estimation.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::normalize_sign_scale;
use crate::roots::real_cubic_roots;

/// A point match `q <-> q'` in homogeneous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub q: Vector3<f64>,
    pub q_prime: Vector3<f64>,
}

impl Correspondence {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Correspondence {
            q: Vector3::new(x1, y1, 1.0),
            q_prime: Vector3::new(x2, y2, 1.0),
        }
    }

    /// Builds from homogeneous vectors, dividing through by the third coordinate.
    pub fn from_homogeneous(q: Vector3<f64>, q_prime: Vector3<f64>) -> Result<Self> {
        if q.z == 0.0 || q_prime.z == 0.0 {
            return Err(Error::InvalidInput("point at infinity".into()));
        }
        Ok(Correspondence {
            q: q / q.z,
            q_prime: q_prime / q_prime.z,
        })
    }

    /// Applies `m` to both points and re-homogenizes.
    pub fn transformed(&self, m: &Matrix3<f64>) -> Correspondence {
        let q = m * self.q;
        let qp = m * self.q_prime;
        Correspondence {
            q: q / q.z,
            q_prime: qp / qp.z,
        }
    }
}

/// `S = [[gamma, 0, alpha], [0, gamma, beta], [0, 0, 1]]`, shared by both views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationTransform {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        NormalizationTransform {
            gamma: 1.0,
            alpha: 0.0,
            beta: 0.0,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.gamma, 0.0, self.alpha, 0.0, self.gamma, self.beta, 0.0, 0.0, 1.0,
        )
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let g = 1.0 / self.gamma;
        Matrix3::new(g, 0.0, -self.alpha * g, 0.0, g, -self.beta * g, 0.0, 0.0, 1.0)
    }

    /// Maps a fundamental matrix estimated on normalized points back to pixels: `S^T F S`.
    pub fn denormalize_fundamental(&self, f: &Matrix3<f64>) -> Matrix3<f64> {
        let s = self.matrix();
        s.transpose() * f * s
    }

    /// Maps a calibration matrix in normalized units back to pixels: `S^-1 K`.
    pub fn denormalize_calibration(&self, k: &Matrix3<f64>) -> Matrix3<f64> {
        self.inverse_matrix() * k
    }
}

/// Fundamental matrix, unit Frobenius norm, largest-magnitude entry positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

/// Largest `|det F|` accepted for a unit-norm fundamental matrix.
pub const RANK_TWO_TOL: f64 = 1e-9;

impl FundamentalMatrix {
    /// Normalizes `m` and checks that it is rank two.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let n = normalize_sign_scale(&m)
            .ok_or_else(|| Error::InvalidInput("fundamental matrix is zero".into()))?;
        if n.determinant().abs() > RANK_TWO_TOL {
            return Err(Error::InvalidInput(format!(
                "fundamental matrix is not rank two (det = {:.3e})",
                n.determinant()
            )));
        }
        Ok(FundamentalMatrix(n))
    }

    /// Normalizes `m` after projecting it to the nearest rank-two matrix.
    pub fn from_rank_projection(m: Matrix3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let mut sv = svd.singular_values;
        let imin = sv.imin();
        sv[imin] = 0.0;
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        FundamentalMatrix::new(u * Matrix3::from_diagonal(&sv) * v_t)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Right and left null vectors (epipoles) `e`, `e'` with `F e = 0`, `F^T e' = 0`.
    pub fn epipoles(&self) -> (Vector3<f64>, Vector3<f64>) {
        let svd = self.0.svd(true, true);
        let i = svd.singular_values.imin();
        let e = svd.v_t.expect("svd v_t").row(i).transpose();
        let e_left = svd.u.expect("svd u").column(i).into_owned();
        (e, e_left)
    }
}

/// Computes the shared normalization `S` for all `2N` points and returns it
/// together with the transformed correspondences.
pub fn normalize(
    points: &[Correspondence],
) -> Result<(NormalizationTransform, Vec<Correspondence>)> {
    if points.len() < 7 {
        return Err(Error::InvalidInput(format!(
            "need at least 7 correspondences, got {}",
            points.len()
        )));
    }
    let n2 = (2 * points.len()) as f64;
    let pooled = || points.iter().flat_map(|c| [c.q, c.q_prime]);
    let (sx, sy) = pooled().fold((0.0, 0.0), |(x, y), q| (x + q.x, y + q.y));
    let (cx, cy) = (sx / n2, sy / n2);
    let mean_dist = pooled()
        .map(|q| (q.x - cx).hypot(q.y - cy))
        .sum::<f64>()
        / n2;
    if !(mean_dist > 1e-12 * (1.0 + cx.abs().max(cy.abs()))) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let gamma = std::f64::consts::SQRT_2 / mean_dist;
    let s = NormalizationTransform {
        gamma,
        alpha: -gamma * cx,
        beta: -gamma * cy,
    };
    // Subtract the centroid before scaling so the new centroid is exactly zero
    // up to rounding of the mean.
    let out = points
        .iter()
        .map(|c| Correspondence {
            q: Vector3::new(gamma * (c.q.x - cx), gamma * (c.q.y - cy), 1.0),
            q_prime: Vector3::new(gamma * (c.q_prime.x - cx), gamma * (c.q_prime.y - cy), 1.0),
        })
        .collect();
    Ok((s, out))
}

/// `|q'^T F q|`.
pub fn epipolar_residual(f: &FundamentalMatrix, c: &Correspondence) -> f64 {
    c.q_prime.dot(&(f.matrix() * c.q)).abs()
}

fn design_matrix(points: &[Correspondence], min_rows: usize) -> DMatrix<f64> {
    let rows = points.len().max(min_rows);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, c) in points.iter().enumerate() {
        let (x, y, w) = (c.q.x, c.q.y, c.q.z);
        let (xp, yp, wp) = (c.q_prime.x, c.q_prime.y, c.q_prime.z);
        let row = [
            xp * x, xp * y, xp * w, yp * x, yp * y, yp * w, wp * x, wp * y, wp * w,
        ];
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    a
}

/// Singular values (descending) and right singular vectors (rows) of the
/// design matrix, zero-padded to 9 rows so the full null space is available.
fn design_svd(points: &[Correspondence]) -> (Vec<f64>, DMatrix<f64>) {
    let a = design_matrix(points, 9);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("svd v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = order.iter().map(|&i| svd.singular_values[i]).collect();
    let rows = DMatrix::from_fn(order.len(), 9, |r, c| v_t[(order[r], c)]);
    (sv, rows)
}

fn row_to_matrix(v: &DMatrix<f64>, r: usize) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| v[(r, 3 * i + j)])
}

/// Relative singular value threshold for rank decisions on the design matrix.
const DESIGN_RANK_TOL: f64 = 1e-10;

/// Minimal 7-point solver. Returns the real roots of `det(F1 + l F2) = 0`
/// over the two-dimensional null space of the design matrix.
pub fn solve_fundamental_7pt(points: &[Correspondence]) -> Result<Vec<FundamentalMatrix>> {
    if points.len() != 7 {
        return Err(Error::InvalidInput(format!(
            "the 7-point solver needs exactly 7 correspondences, got {}",
            points.len()
        )));
    }
    let (sv, v) = design_svd(points);
    if sv[6] <= DESIGN_RANK_TOL * sv[0] {
        return Err(Error::Degenerate(
            "design matrix null space has dimension above two".into(),
        ));
    }
    let f1 = row_to_matrix(&v, 7);
    let f2 = row_to_matrix(&v, 8);
    let coeffs = det_pencil_coefficients(&f1, &f2);
    let mut candidates: Vec<Matrix3<f64>> = real_cubic_roots(coeffs[0], coeffs[1], coeffs[2], coeffs[3])
        .into_iter()
        .map(|l| f1 + f2 * l)
        .collect();
    // A vanishing leading coefficient means F2 itself is singular (root at infinity).
    let lead_scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if coeffs[3].abs() <= 1e-14 * lead_scale {
        candidates.push(f2);
    }
    candidates
        .into_iter()
        .map(FundamentalMatrix::from_rank_projection)
        .collect()
}

/// Coefficients `[c0, c1, c2, c3]` of `det(F1 + l F2)` as a cubic in `l`,
/// by exact interpolation at `l = -1, 0, 1, 2`.
pub fn det_pencil_coefficients(f1: &Matrix3<f64>, f2: &Matrix3<f64>) -> [f64; 4] {
    let d = |l: f64| (f1 + f2 * l).determinant();
    let (dm1, d0, d1, d2) = (d(-1.0), d(0.0), d(1.0), d(2.0));
    let c0 = d0;
    let c2 = (d1 + dm1) / 2.0 - d0;
    // d(1) - d(-1) = 2 c1 + 2 c3 and d(2) = c0 + 2 c1 + 4 c2 + 8 c3.
    let c3 = (d2 - c0 - 4.0 * c2 - (d1 - dm1)) / 6.0;
    let c1 = (d1 - dm1) / 2.0 - c3;
    [c0, c1, c2, c3]
}

/// Linear least-squares estimate from `N >= 8` correspondences with rank two
/// enforced by truncating the smallest singular value.
pub fn solve_fundamental_npt(points: &[Correspondence]) -> Result<FundamentalMatrix> {
    if points.len() < 8 {
        return Err(Error::InvalidInput(format!(
            "the linear solver needs at least 8 correspondences, got {}",
            points.len()
        )));
    }
    let (sv, v) = design_svd(points);
    if sv[7] <= DESIGN_RANK_TOL * sv[0] {
        return Err(Error::Degenerate("design matrix rank below eight".into()));
    }
    FundamentalMatrix::from_rank_projection(row_to_matrix(&v, 8))
}
