//! Gröbner basis solver for the calibration unknowns `(a, b, p)`.
//!
//! The four quartics `f1..f4` are pushed through a fixed elimination
//! template of five reduced-row-echelon steps:
//!
//! | stage | size  | basis | built from                                    |
//! |-------|-------|-------|-----------------------------------------------|
//! | B0    | 4x22  | Y0    | coefficients of `f1..f4`                      |
//! | B1    | 7x32  | Y1    | `~B0` plus `a, b, p` times row 4              |
//! | B2    | 13x32 | Y1    | `~B1` plus rows 6, 7 divided by `p`, and `a`, `b` times those quotients |
//! | B3    | 19x32 | Y1    | `~B2` plus `a, b, p` times rows 12, 13        |
//! | B4    | 11x20 | Y4    | rows 4, 10, 11, 12, 13, 16, 17, 19 of `~B3` plus `a, b, p` times row 19 |
//! | B5    | 14x20 | Y4    | `~B4` plus `a, b, p` times row 11             |
//!
//! Row numbers are 1-based. Every basis is ordered so that the reduced matrix
//! starts with an identity block. The last six rows of `~B5` form the reduced
//! Gröbner basis (grevlex, `a > b > p`) with leading monomials
//! `a^2, ab, b^2, bp^2, p^3, ap`, leaving the standard monomials
//! `bp, p^2, a, b, p, 1`.

use nalgebra::{DMatrix, Matrix3, Matrix4x3, SMatrix, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{
    coefficient_rows, constraint_polys_in, expand_constraints_in, ConstraintPolys, ConstraintSystem,
    Monomial, Y0,
};
use crate::real::{Extended, Real};
use crate::twoview::FundamentalMatrix;

const fn m(deg_a: u8, deg_b: u8, deg_p: u8) -> Monomial {
    Monomial::new(deg_a, deg_b, deg_p)
}

/// Basis of stages 1 to 3.
pub const Y1: [Monomial; 32] = [
    m(3, 1, 0), // a^3 b
    m(2, 2, 0), // a^2 b^2
    m(1, 3, 0), // a b^3
    m(2, 1, 0), // a^2 b
    m(3, 0, 1), // a^3 p
    m(2, 1, 1), // a^2 b p
    m(1, 2, 1), // a b^2 p
    m(4, 0, 0), // a^4
    m(0, 4, 0), // b^4
    m(3, 0, 0), // a^3
    m(1, 2, 0), // a b^2
    m(0, 3, 0), // b^3
    m(2, 0, 1), // a^2 p
    m(0, 2, 2), // b^2 p^2
    m(1, 0, 2), // a p^2
    m(1, 1, 1), // a b p
    m(0, 2, 1), // b^2 p
    m(0, 3, 1), // b^3 p
    m(2, 0, 0), // a^2
    m(1, 1, 2), // a b p^2
    m(2, 0, 2), // a^2 p^2
    m(1, 1, 0), // a b
    m(0, 2, 0), // b^2
    m(0, 1, 2), // b p^2
    m(0, 0, 3), // p^3
    m(1, 0, 1), // a p
    m(0, 1, 1), // b p
    m(0, 0, 2), // p^2
    m(1, 0, 0), // a
    m(0, 1, 0), // b
    m(0, 0, 1), // p
    m(0, 0, 0), // 1
];

/// Basis of stages 4 and 5 (degree at most three).
pub const Y4: [Monomial; 20] = [
    m(2, 1, 0), // a^2 b
    m(3, 0, 0), // a^3
    m(1, 2, 0), // a b^2
    m(0, 3, 0), // b^3
    m(2, 0, 1), // a^2 p
    m(1, 0, 2), // a p^2
    m(1, 1, 1), // a b p
    m(0, 2, 1), // b^2 p
    m(2, 0, 0), // a^2
    m(1, 1, 0), // a b
    m(0, 2, 0), // b^2
    m(0, 1, 2), // b p^2
    m(0, 0, 3), // p^3
    m(1, 0, 1), // a p
    m(0, 1, 1), // b p
    m(0, 0, 2), // p^2
    m(1, 0, 0), // a
    m(0, 1, 0), // b
    m(0, 0, 1), // p
    m(0, 0, 0), // 1
];

/// Standard monomials of the quotient ring, i.e. the last six entries of [`Y4`].
pub const STANDARD_MONOMIALS: [Monomial; 6] =
    [m(0, 1, 1), m(0, 0, 2), m(1, 0, 0), m(0, 1, 0), m(0, 0, 1), m(0, 0, 0)];

/// Expected `(rows, cols)` of `B0..B5`.
pub const STAGE_DIMENSIONS: [(usize, usize); 6] =
    [(4, 22), (7, 32), (13, 32), (19, 32), (11, 20), (14, 20)];

/// Pivot threshold relative to the largest entry of the pivot column, for
/// `f64` arithmetic.
pub const PIVOT_REL_TOL: f64 = 1e-10;

/// Pivot threshold for extended-precision elimination: only zero pivots are
/// rejected. The last pivot of the final stage scales with how far `F` is
/// from an exactly consistent input, so it sits near `1e-11` relative for
/// `F` rounded to `f64` and occasionally far below roundoff, with no loss of
/// accuracy in the roots.
pub const EXTENDED_PIVOT_REL_TOL: f64 = 0.0;

/// [`PIVOT_REL_TOL`] for `f64`, [`EXTENDED_PIVOT_REL_TOL`] for wider types.
pub fn pivot_tolerance<T: Real>() -> f64 {
    if T::EPSILON < f64::EPSILON {
        EXTENDED_PIVOT_REL_TOL
    } else {
        PIVOT_REL_TOL
    }
}

/// Largest relative coefficient allowed on a monomial that the template
/// assumes to vanish (non-divisible terms at stage 2, monomials leaving the
/// basis elsewhere). Such coefficients are zeroed once checked.
pub const STRUCTURE_REL_TOL: f64 = 1e-6;

/// Imaginary part allowed for a root to count as real, relative to `1 + |re|`.
pub const COMPLEX_REL_TOL: f64 = 1e-6;

/// Eigenvectors whose `1`-coordinate is below this fraction of their norm are
/// treated as solutions at infinity.
pub const INFINITY_REL_TOL: f64 = 1e-12;

/// One elimination stage: the assembled matrix `B_i`, its reduced row
/// echelon form and the column basis. Entries are rounded to `f64` even when
/// the elimination ran in extended precision.
#[derive(Debug, Clone)]
pub struct Stage {
    pub matrix: DMatrix<f64>,
    pub reduced: DMatrix<f64>,
    pub basis: Vec<Monomial>,
}

impl Stage {
    pub fn dimensions(&self) -> (usize, usize) {
        self.matrix.shape()
    }
}

#[derive(Debug, Clone)]
pub struct EliminationTrace {
    pub stages: Vec<Stage>,
    /// Last three rows of the lower-right 6x6 block of `~B5`, kept at the
    /// working precision of the elimination.
    tail: [[Extended; 6]; 3],
}

impl EliminationTrace {
    pub fn dimensions(&self) -> Vec<(usize, usize)> {
        self.stages.iter().map(Stage::dimensions).collect()
    }

    /// `~B5`.
    pub fn final_reduced(&self) -> &DMatrix<f64> {
        &self.stages[5].reduced
    }

    /// The six Gröbner basis rows over [`Y4`].
    pub fn groebner_rows(&self) -> DMatrix<f64> {
        let r = self.final_reduced();
        r.rows(r.nrows() - 6, 6).into_owned()
    }
}

type Rows<T> = Vec<Vec<T>>;

fn position(basis: &[Monomial], mono: Monomial) -> Option<usize> {
    basis.iter().position(|&x| x == mono)
}

fn amax<T: Real>(row: &[T]) -> f64 {
    row.iter().fold(0.0f64, |acc, v| acc.max(v.to_f64().abs()))
}

/// Re-expresses `row * by` over `to`. Products outside `to` must be negligible.
fn shift_row<T: Real>(
    row: &[T],
    from: &[Monomial],
    to: &[Monomial],
    by: Monomial,
    stage: usize,
) -> Result<Vec<T>> {
    let scale = amax(row);
    let mut out = vec![T::zero(); to.len()];
    let mut dropped = 0.0f64;
    for (&coeff, &mono) in row.iter().zip(from) {
        match position(to, mono * by) {
            Some(c) => out[c] += coeff,
            None => dropped = dropped.max(coeff.to_f64().abs()),
        }
    }
    if dropped > STRUCTURE_REL_TOL * scale {
        return Err(Error::TemplateStructure {
            stage,
            residue: dropped / scale,
        });
    }
    Ok(out)
}

/// Largest coefficient on a monomial not divisible by `p`, relative to the
/// largest coefficient of the row.
pub fn p_divisibility_residue<T: Real>(row: &[T], basis: &[Monomial]) -> f64 {
    let scale = amax(row);
    let off = row
        .iter()
        .zip(basis)
        .filter(|(_, mono)| mono.deg_p == 0)
        .fold(0.0f64, |acc, (v, _)| acc.max(v.to_f64().abs()));
    if scale == 0.0 {
        0.0
    } else {
        off / scale
    }
}

/// `row / p` over the same basis; non-divisible terms are checked and zeroed.
fn divide_by_p<T: Real>(row: &[T], basis: &[Monomial], stage: usize) -> Result<Vec<T>> {
    let residue = p_divisibility_residue(row, basis);
    if residue > STRUCTURE_REL_TOL {
        return Err(Error::TemplateStructure { stage, residue });
    }
    let mut out = vec![T::zero(); basis.len()];
    for (&coeff, &mono) in row.iter().zip(basis) {
        if let Some(q) = mono.checked_div(Monomial::P) {
            let c = position(basis, q).ok_or(Error::TemplateStructure { stage, residue: 1.0 })?;
            out[c] += coeff;
        }
    }
    Ok(out)
}

/// Gauss-Jordan elimination of the leading square block with partial
/// pivoting, after scaling every row to unit max-norm.
pub fn rref(matrix: &DMatrix<f64>, stage: usize) -> Result<DMatrix<f64>> {
    let rows: Rows<f64> = (0..matrix.nrows()).map(|r| matrix.row(r).iter().copied().collect()).collect();
    let reduced = rref_rows(rows, stage)?;
    Ok(to_matrix(&reduced, matrix.ncols()))
}

fn rref_rows<T: Real>(mut b: Rows<T>, stage: usize) -> Result<Rows<T>> {
    let rows = b.len();
    let cols = b.first().map_or(0, Vec::len);
    if rows > cols {
        return Err(Error::InvalidInput("more rows than columns".into()));
    }
    for r in &mut b {
        let s = r.iter().fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m });
        if !s.is_zero() {
            for v in r.iter_mut() {
                *v = *v / s;
            }
        }
    }
    for j in 0..rows {
        let col_max = (0..rows).fold(0.0f64, |m, i| m.max(b[i][j].to_f64().abs()));
        let best = (j..rows)
            .max_by(|&x, &y| b[x][j].abs().partial_cmp(&b[y][j].abs()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(j);
        let pivot = b[best][j].to_f64().abs();
        if !(pivot > pivot_tolerance::<T>() * col_max) {
            return Err(Error::SmallPivot {
                stage,
                column: j,
                pivot: if col_max > 0.0 { pivot / col_max } else { 0.0 },
            });
        }
        b.swap(j, best);
        let inv = T::one() / b[j][j];
        for v in b[j].iter_mut() {
            *v = *v * inv;
        }
        b[j][j] = T::one();
        let pivot_row = b[j].clone();
        for (i, row) in b.iter_mut().enumerate() {
            let factor = row[j];
            if i == j || factor.is_zero() {
                continue;
            }
            for c in j + 1..cols {
                row[c] -= factor * pivot_row[c];
            }
            row[j] = T::zero();
        }
    }
    Ok(b)
}

fn to_matrix<T: Real>(rows: &Rows<T>, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j].to_f64())
}

struct Step<T: Real> {
    stage: Stage,
    reduced: Rows<T>,
}

fn reduce<T: Real>(matrix: Rows<T>, basis: &[Monomial], index: usize) -> Result<Step<T>> {
    let reduced = rref_rows(matrix.clone(), index)?;
    let cols = basis.len();
    Ok(Step {
        stage: Stage {
            matrix: to_matrix(&matrix, cols),
            reduced: to_matrix(&reduced, cols),
            basis: basis.to_vec(),
        },
        reduced,
    })
}

/// Runs the five-step elimination template on `B0`.
pub fn eliminate(system: &ConstraintSystem) -> Result<EliminationTrace> {
    eliminate_in(system)
}

/// [`eliminate`] over an arbitrary scalar type.
pub fn eliminate_in<T: Real>(system: &ConstraintSystem<T>) -> Result<EliminationTrace> {
    let (a, b, p, one) = (Monomial::A, Monomial::B, Monomial::P, Monomial::ONE);
    let b0: Rows<T> = (0..4).map(|i| (0..22).map(|j| system.b0[(i, j)]).collect()).collect();
    let s0 = reduce(b0, &system.basis, 0)?;

    // Stage 1: row 4 of ~B0 is cubic; append its a-, b- and p-multiples.
    let t0 = &s0.reduced;
    let mut rows = Vec::with_capacity(7);
    for r in t0 {
        rows.push(shift_row(r, &Y0, &Y1, one, 1)?);
    }
    for v in [a, b, p] {
        rows.push(shift_row(&t0[3], &Y0, &Y1, v, 1)?);
    }
    let s1 = reduce(rows, &Y1, 1)?;

    // Stage 2: rows 6 and 7 of ~B1 are divisible by p.
    let t1 = &s1.reduced;
    let mut rows = t1.clone();
    for r in [5, 6] {
        let q = divide_by_p(&t1[r], &Y1, 2)?;
        let qa = shift_row(&q, &Y1, &Y1, a, 2)?;
        let qb = shift_row(&q, &Y1, &Y1, b, 2)?;
        rows.extend([q, qa, qb]);
    }
    let s2 = reduce(rows, &Y1, 2)?;

    // Stage 3: a-, b-, p-multiples of rows 12 and 13 of ~B2.
    let t2 = &s2.reduced;
    let mut rows = t2.clone();
    for r in [11, 12] {
        for v in [a, b, p] {
            rows.push(shift_row(&t2[r], &Y1, &Y1, v, 3)?);
        }
    }
    let s3 = reduce(rows, &Y1, 3)?;

    // Stage 4: drop degree-4 rows and columns, keep the cubic rows and
    // append the multiples of the quadratic row 19.
    let t3 = &s3.reduced;
    let mut rows = Vec::with_capacity(11);
    for r in [4usize, 10, 11, 12, 13, 16, 17, 19] {
        rows.push(shift_row(&t3[r - 1], &Y1, &Y4, one, 4)?);
    }
    for v in [a, b, p] {
        rows.push(shift_row(&t3[18], &Y1, &Y4, v, 4)?);
    }
    let s4 = reduce(rows, &Y4, 4)?;

    // Stage 5: a-, b-, p-multiples of row 11 of ~B4.
    let t4 = &s4.reduced;
    let mut rows = t4.clone();
    for v in [a, b, p] {
        rows.push(shift_row(&t4[10], &Y4, &Y4, v, 5)?);
    }
    let s5 = reduce(rows, &Y4, 5)?;

    let last = &s5.reduced;
    let tail = std::array::from_fn(|i| std::array::from_fn(|j| last[last.len() - 3 + i][14 + j].to_extended()));
    Ok(EliminationTrace {
        stages: [s0, s1, s2, s3, s4, s5].into_iter().map(|s| s.stage).collect(),
        tail,
    })
}

/// Multiplication-by-`p` matrix on the standard monomials
/// `[bp, p^2, a, b, p, 1]`, so that `M v = p v` for `v` evaluated at a root.
pub fn action_matrix(trace: &EliminationTrace) -> SMatrix<f64, 6, 6> {
    let t5 = trace.final_reduced();
    let (rows, cols) = t5.shape();
    // C: lower-right 6x6 block; its last three rows express bp^2, p^3, ap.
    let c = t5.view((rows - 6, cols - 6), (6, 6));
    let mut mp = SMatrix::<f64, 6, 6>::zeros();
    for i in 0..3 {
        for j in 0..6 {
            mp[(i, j)] = -c[(3 + i, j)];
        }
    }
    mp[(3, 0)] = 1.0; // p * b = bp
    mp[(4, 1)] = 1.0; // p * p = p^2
    mp[(5, 4)] = 1.0; // p * 1 = p
    mp
}

fn action_matrix_extended(trace: &EliminationTrace) -> [[Extended; 6]; 6] {
    let mut mp = [[Extended::zero(); 6]; 6];
    for (row, tail) in mp.iter_mut().zip(&trace.tail) {
        *row = tail.map(|v| -v);
    }
    mp[3][0] = Extended::one();
    mp[4][1] = Extended::one();
    mp[5][4] = Extended::one();
    mp
}

/// Shift used by [`roots_from_trace`]; feasible roots have `p > 0`.
pub const INVERSE_SHIFT: f64 = -1.0;

/// `(M - sigma I)^-1` by Gauss-Jordan in extended precision, or `None` when
/// `sigma` is (numerically) an eigenvalue.
fn shifted_inverse(mp: &[[Extended; 6]; 6], sigma: f64) -> Option<SMatrix<f64, 6, 6>> {
    let sigma = Extended::from_f64(sigma);
    let mut aug: Rows<Extended> = (0..6)
        .map(|i| {
            (0..12)
                .map(|j| match j {
                    j if j < 6 && j == i => mp[i][j] - sigma,
                    j if j < 6 => mp[i][j],
                    j if j - 6 == i => Extended::one(),
                    _ => Extended::zero(),
                })
                .collect()
        })
        .collect();
    for j in 0..6 {
        let best = (j..6).max_by(|&x, &y| aug[x][j].abs().partial_cmp(&aug[y][j].abs()).unwrap_or(std::cmp::Ordering::Equal))?;
        if aug[best][j].is_zero() {
            return None;
        }
        aug.swap(j, best);
        let inv = Extended::one() / aug[j][j];
        for v in aug[j].iter_mut() {
            *v = *v * inv;
        }
        let pivot_row = aug[j].clone();
        for (i, row) in aug.iter_mut().enumerate() {
            let factor = row[j];
            if i == j || factor.is_zero() {
                continue;
            }
            for c in 0..12 {
                row[c] -= factor * pivot_row[c];
            }
        }
    }
    let out = SMatrix::<f64, 6, 6>::from_fn(|i, j| aug[i][6 + j].to_f64());
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// A root of the system over the complex numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub a: Complex64,
    pub b: Complex64,
    pub p: Complex64,
    /// Eigenvalue of the action matrix.
    pub eigenvalue: Complex64,
    /// The eigenvector had a vanishing `1`-coordinate.
    pub at_infinity: bool,
}

impl Root {
    pub fn is_real(&self) -> bool {
        let small = |z: Complex64| z.im.abs() <= COMPLEX_REL_TOL * (1.0 + z.re.abs());
        !self.at_infinity && small(self.eigenvalue) && small(self.a) && small(self.b) && small(self.p)
    }

    pub fn is_feasible(&self) -> bool {
        self.is_real() && self.p.re > 0.0
    }
}

/// Calibration `K = [[f, 0, a], [0, f, b], [0, 0, 1]]` with `p = f^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSolution {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub f: f64,
}

impl CalibrationSolution {
    pub fn new(a: f64, b: f64, p: f64) -> Self {
        CalibrationSolution {
            a,
            b,
            p,
            f: p.max(0.0).sqrt(),
        }
    }

    pub fn from_calibration_matrix(k: &Matrix3<f64>) -> Self {
        let k = k / k[(2, 2)];
        let f = 0.5 * (k[(0, 0)] + k[(1, 1)]);
        CalibrationSolution {
            a: k[(0, 2)],
            b: k[(1, 2)],
            p: f * f,
            f,
        }
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.f, 0.0, self.a, 0.0, self.f, self.b, 0.0, 0.0, 1.0)
    }
}

/// Null vector of `M - lambda I` via complex SVD.
fn eigenvector(mp: &SMatrix<f64, 6, 6>, lambda: Complex64) -> [Complex64; 6] {
    let shifted = DMatrix::<Complex64>::from_fn(6, 6, |i, j| {
        let v = Complex64::new(mp[(i, j)], 0.0);
        if i == j {
            v - lambda
        } else {
            v
        }
    });
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("svd v_t");
    let k = svd.singular_values.imin();
    std::array::from_fn(|j| v_t[(k, j)].conj())
}

/// `(a, b)` for the eigenvalue `lambda`, using the structure of `M_p`.
///
/// An eigenvector is `[lambda b, lambda^2, a, b, lambda, 1]`, so the first
/// three rows of `(M - lambda I) v = 0` are linear in `(a, b)`. Solving
/// them (each row scaled to unit norm) is far better conditioned than a
/// generic null vector when the entries of `M` span many magnitudes.
fn structured_readout(mp: &SMatrix<f64, 6, 6>, lambda: Complex64) -> (Complex64, Complex64) {
    let c = |v: f64| Complex64::new(v, 0.0);
    let mut lhs = DMatrix::<Complex64>::zeros(3, 2);
    let mut rhs = DMatrix::<Complex64>::zeros(3, 1);
    for i in 0..3 {
        let row = |j: usize| c(mp[(i, j)]);
        // Coefficients of a and b, and the constant part, before moving
        // lambda * v_i to the left.
        let mut ca = row(2);
        let mut cb = row(0) * lambda + row(3);
        let mut k = row(1) * lambda * lambda + row(4) * lambda + row(5);
        match i {
            0 => cb -= lambda * lambda,
            1 => k -= lambda * lambda * lambda,
            _ => ca -= lambda,
        }
        let norm = (ca.norm_sqr() + cb.norm_sqr() + k.norm_sqr()).sqrt();
        if norm > 0.0 {
            lhs[(i, 0)] = ca / norm;
            lhs[(i, 1)] = cb / norm;
            rhs[(i, 0)] = -k / norm;
        }
    }
    match lhs.svd(true, true).solve(&rhs, 1e-14) {
        Ok(x) => (x[(0, 0)], x[(1, 0)]),
        Err(_) => (c(f64::NAN), c(f64::NAN)),
    }
}

/// All six roots (with multiplicity) of the action matrix. The eigenvalue
/// gives `p`; `a` and `b` come from [`structured_readout`].
pub fn all_roots(mp: &SMatrix<f64, 6, 6>) -> Vec<Root> {
    mp.complex_eigenvalues()
        .iter()
        .map(|&lambda| root_for_eigenvalue(mp, lambda))
        .collect()
}

fn root_for_eigenvalue(mp: &SMatrix<f64, 6, 6>, lambda: Complex64) -> Root {
    let infinite = Root {
        a: Complex64::new(f64::NAN, 0.0),
        b: Complex64::new(f64::NAN, 0.0),
        p: lambda,
        eigenvalue: lambda,
        at_infinity: true,
    };
    if !lambda.is_finite() {
        return infinite;
    }
    let v = eigenvector(mp, lambda);
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if v[5].norm() < INFINITY_REL_TOL * norm {
        return infinite;
    }
    let (a, b) = structured_readout(mp, lambda);
    Root {
        a,
        b,
        p: lambda,
        eigenvalue: lambda,
        at_infinity: false,
    }
}

/// Roots from the eigenvalues of `(M_p - sigma I)^-1`, formed in extended
/// precision. A near root at infinity gives `M_p` a huge eigenvalue that
/// costs every other eigenvalue its accuracy in `f64`; after the shifted
/// inversion it becomes a tiny one and does no harm.
pub fn roots_from_trace(trace: &EliminationTrace) -> Vec<Root> {
    let mp = action_matrix(trace);
    let Some(inv) = shifted_inverse(&action_matrix_extended(trace), INVERSE_SHIFT) else {
        return all_roots(&mp);
    };
    inv.complex_eigenvalues()
        .iter()
        .map(|&mu| {
            let lambda = if mu.norm() > 0.0 {
                Complex64::new(INVERSE_SHIFT, 0.0) + mu.inv()
            } else {
                Complex64::new(f64::INFINITY, 0.0)
            };
            root_for_eigenvalue(&mp, lambda)
        })
        .collect()
}

/// Real solutions with `p > 0`, sorted by descending `p`.
pub fn feasible_solutions(roots: &[Root]) -> Vec<CalibrationSolution> {
    let mut out: Vec<CalibrationSolution> = roots
        .iter()
        .filter(|r| r.is_feasible())
        .map(|r| CalibrationSolution::new(r.a.re, r.b.re, r.p.re))
        .collect();
    out.sort_by(|x, y| y.p.total_cmp(&x.p));
    out
}

/// Feasible solutions from the action matrix.
pub fn extract_solutions(mp: &SMatrix<f64, 6, 6>) -> Vec<CalibrationSolution> {
    feasible_solutions(&all_roots(mp))
}

/// Everything the solver produced for one `(F, tau)` instance.
#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub roots: Vec<Root>,
    pub feasible: Vec<CalibrationSolution>,
}

impl SolverOutput {
    pub fn n_real(&self) -> usize {
        self.roots.iter().filter(|r| r.is_real()).count()
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(-1.0 - 1e-9..=3.0 + 1e-9).contains(&tau) {
        return Err(Error::InvalidInput(format!(
            "rotation trace {tau} outside [-1, 3]"
        )));
    }
    Ok(())
}

/// `F` rebuilt from its two leading singular triplets in extended precision,
/// so that it is rank two to about 30 digits.
pub fn exact_rank_two(f: &Matrix3<f64>) -> [[Extended; 3]; 3] {
    let svd = f.svd(true, true);
    let (u, v_t) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            order[..2].iter().fold(Extended::zero(), |acc, &k| {
                let uv = Extended::from_f64(u[(i, k)]) * Extended::from_f64(v_t[(k, j)]);
                acc + uv * Extended::from_f64(svd.singular_values[k])
            })
        })
    })
}

/// Expansion and elimination for `(F, tau)` in extended precision.
pub fn elimination_trace(f: &Matrix3<f64>, tau: f64) -> Result<EliminationTrace> {
    check_tau(tau)?;
    let system = expand_constraints_in(&exact_rank_two(f), Extended::from_f64(tau))?;
    eliminate_in(&system)
}

/// Maximum Gauss-Newton iterations in [`polish_root`].
pub const POLISH_ITERATIONS: usize = 6;

fn scaled_residuals(polys: &ConstraintPolys<Extended>, x: [f64; 3]) -> (Vector4<f64>, Matrix4x3<f64>) {
    let [a, b, p] = x.map(Extended::from_f64);
    let mut r = Vector4::zeros();
    let mut jac = Matrix4x3::zeros();
    for (i, poly) in polys.selected().into_iter().enumerate() {
        // Row scale: sum of |coefficient * monomial| at x.
        let scale: f64 = poly
            .terms()
            .map(|(m, c)| (c.to_f64() * m.eval(x[0], x[1], x[2])).abs())
            .sum::<f64>()
            .max(f64::MIN_POSITIVE);
        r[i] = poly.eval(a, b, p).to_f64() / scale;
        for v in 0..3 {
            jac[(i, v)] = poly.derivative(v).eval(a, b, p).to_f64() / scale;
        }
    }
    (r, jac)
}

/// Refines a real root of `f1..f4` by Gauss-Newton, evaluating the
/// constraints in extended precision. A step is only taken when it lowers
/// the residual, so a good root is never made worse.
pub fn polish_root(polys: &ConstraintPolys<Extended>, root: [f64; 3]) -> [f64; 3] {
    let mut x = root;
    let (mut r, mut jac) = scaled_residuals(polys, x);
    for _ in 0..POLISH_ITERATIONS {
        let Ok(step) = jac.svd(true, true).solve(&r, 1e-14) else {
            break;
        };
        let cand = [x[0] - step[0], x[1] - step[1], x[2] - step[2]];
        if !cand.iter().all(|v| v.is_finite()) {
            break;
        }
        let (rc, jc) = scaled_residuals(polys, cand);
        if rc.norm() >= r.norm() {
            break;
        }
        x = cand;
        r = rc;
        jac = jc;
    }
    x
}

/// Full solve, keeping the complex and infeasible roots.
///
/// The expansion and elimination run in double-double arithmetic on the
/// rank-two projection of `F`: the template amplifies the rounding of a
/// nearly singular `F` by many orders of magnitude, which in plain `f64`
/// costs several digits on a sizable fraction of inputs. Real roots are then
/// polished, since the `f64` action matrix can carry a huge eigenvalue (a
/// near root at infinity) that swamps the accuracy of the others.
pub fn solve(f: &FundamentalMatrix, tau: f64) -> Result<SolverOutput> {
    check_tau(tau)?;
    let polys = constraint_polys_in(&exact_rank_two(f.matrix()), Extended::from_f64(tau));
    let trace = eliminate_in(&coefficient_rows(&polys)?)?;
    let mut roots = roots_from_trace(&trace);
    for root in roots.iter_mut().filter(|r| r.is_real()) {
        let [a, b, p] = polish_root(&polys, [root.a.re, root.b.re, root.p.re]);
        root.a = Complex64::new(a, 0.0);
        root.b = Complex64::new(b, 0.0);
        root.p = Complex64::new(p, 0.0);
    }
    let feasible = feasible_solutions(&roots);
    Ok(SolverOutput { roots, feasible })
}

/// Feasible calibrations for `F` and the rotation trace `tau`, in the units
/// of the coordinates `F` was estimated in.
pub fn self_calibrate(f: &FundamentalMatrix, tau: f64) -> Result<Vec<CalibrationSolution>> {
    Ok(solve(f, tau)?.feasible)
}
