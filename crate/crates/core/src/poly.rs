//! Polynomials in the three calibration unknowns `(a, b, p)` and the exact
//! expansion of the self-calibration constraints into coefficient rows.
//!
//! With `w = K K^T` (a polynomial matrix in `a, b, p`) and a fixed fundamental
//! matrix `F`, the constraints are
//!
//! ```text
//! G  = 1/2 tr(F w F^T w) F - F w F^T w F                       (3x3, cubic in F)
//! f4 = 1/2 (tau^2 - 1) tr(F w F^T w) + (tau + 1) tr(w F w F) - tau tr(w F)^2
//! ```
//!
//! and the solver uses `f1 = G11`, `f2 = G22`, `f3 = G33` and `f4`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, SMatrix};

use crate::error::{Error, Result};
use crate::real::Real;

/// Exponents of `a^i b^j p^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial {
    pub deg_a: u8,
    pub deg_b: u8,
    pub deg_p: u8,
}

impl Monomial {
    pub const ONE: Monomial = Monomial::new(0, 0, 0);
    pub const A: Monomial = Monomial::new(1, 0, 0);
    pub const B: Monomial = Monomial::new(0, 1, 0);
    pub const P: Monomial = Monomial::new(0, 0, 1);

    pub const fn new(deg_a: u8, deg_b: u8, deg_p: u8) -> Self {
        Monomial { deg_a, deg_b, deg_p }
    }

    pub fn degree(self) -> u32 {
        u32::from(self.deg_a) + u32::from(self.deg_b) + u32::from(self.deg_p)
    }

    pub fn eval(self, a: f64, b: f64, p: f64) -> f64 {
        a.powi(self.deg_a.into()) * b.powi(self.deg_b.into()) * p.powi(self.deg_p.into())
    }

    /// `self / other` when `other` divides `self`.
    pub fn checked_div(self, other: Monomial) -> Option<Monomial> {
        Some(Monomial::new(
            self.deg_a.checked_sub(other.deg_a)?,
            self.deg_b.checked_sub(other.deg_b)?,
            self.deg_p.checked_sub(other.deg_p)?,
        ))
    }
}

impl Mul for Monomial {
    type Output = Monomial;

    fn mul(self, rhs: Monomial) -> Monomial {
        Monomial::new(
            self.deg_a + rhs.deg_a,
            self.deg_b + rhs.deg_b,
            self.deg_p + rhs.deg_p,
        )
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.degree() == 0 {
            return write!(f, "1");
        }
        for (name, deg) in [("a", self.deg_a), ("b", self.deg_b), ("p", self.deg_p)] {
            match deg {
                0 => {}
                1 => write!(f, "{name}")?,
                d => write!(f, "{name}^{d}")?,
            }
        }
        Ok(())
    }
}

const fn m(deg_a: u8, deg_b: u8, deg_p: u8) -> Monomial {
    Monomial::new(deg_a, deg_b, deg_p)
}

/// Column basis of the initial coefficient matrix `B0`.
pub const Y0: [Monomial; 22] = [
    m(3, 1, 0), // a^3 b
    m(2, 2, 0), // a^2 b^2
    m(1, 3, 0), // a b^3
    m(2, 1, 0), // a^2 b
    m(4, 0, 0), // a^4
    m(0, 4, 0), // b^4
    m(3, 0, 0), // a^3
    m(1, 2, 0), // a b^2
    m(0, 3, 0), // b^3
    m(2, 0, 1), // a^2 p
    m(1, 1, 1), // a b p
    m(0, 2, 1), // b^2 p
    m(2, 0, 0), // a^2
    m(1, 1, 0), // a b
    m(0, 2, 0), // b^2
    m(1, 0, 1), // a p
    m(0, 1, 1), // b p
    m(0, 0, 2), // p^2
    m(1, 0, 0), // a
    m(0, 1, 0), // b
    m(0, 0, 1), // p
    m(0, 0, 0), // 1
];

/// Relative size below which a coefficient outside the basis is treated as
/// rounding noise.
pub const PRUNE_REL_TOL: f64 = 1e-12;

/// Sparse polynomial in `(a, b, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly3<T: Real = f64> {
    terms: BTreeMap<Monomial, T>,
}

impl<T: Real> Default for Poly3<T> {
    fn default() -> Self {
        Poly3 {
            terms: BTreeMap::new(),
        }
    }
}

impl<T: Real> Poly3<T> {
    pub fn zero() -> Self {
        Poly3::default()
    }

    pub fn constant(c: T) -> Self {
        Poly3::term(Monomial::ONE, c)
    }

    pub fn term(mono: Monomial, coeff: T) -> Self {
        let mut out = Poly3::zero();
        out.add_term(mono, coeff);
        out
    }

    pub fn var_a() -> Self {
        Poly3::term(Monomial::A, T::one())
    }

    pub fn var_b() -> Self {
        Poly3::term(Monomial::B, T::one())
    }

    pub fn var_p() -> Self {
        Poly3::term(Monomial::P, T::one())
    }

    pub fn coeff(&self, mono: Monomial) -> T {
        self.terms.get(&mono).copied().unwrap_or_else(T::zero)
    }

    pub fn terms(&self) -> impl Iterator<Item = (Monomial, T)> + '_ {
        self.terms.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(|m| m.degree()).max()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms
            .values()
            .fold(0.0, |acc, v| acc.max(v.to_f64().abs()))
    }

    pub fn scale(&self, s: T) -> Poly3<T> {
        let mut out = Poly3::zero();
        for (k, v) in &self.terms {
            out.add_term(*k, *v * s);
        }
        out
    }

    /// Drops coefficients below `rel_tol` times the largest coefficient.
    pub fn pruned(mut self, rel_tol: f64) -> Poly3<T> {
        let cutoff = rel_tol * self.max_abs_coeff();
        self.terms.retain(|_, v| v.to_f64().abs() > cutoff);
        self
    }

    pub fn eval(&self, a: T, b: T, p: T) -> T {
        let mut acc = T::zero();
        for (k, v) in &self.terms {
            let mut term = *v;
            for _ in 0..k.deg_a {
                term = term * a;
            }
            for _ in 0..k.deg_b {
                term = term * b;
            }
            for _ in 0..k.deg_p {
                term = term * p;
            }
            acc += term;
        }
        acc
    }

    /// Partial derivative with respect to variable `var` (0 = a, 1 = b, 2 = p).
    pub fn derivative(&self, var: usize) -> Poly3<T> {
        let mut out = Poly3::zero();
        for (k, v) in &self.terms {
            let deg = [k.deg_a, k.deg_b, k.deg_p][var];
            if deg == 0 {
                continue;
            }
            let mut mono = *k;
            match var {
                0 => mono.deg_a -= 1,
                1 => mono.deg_b -= 1,
                _ => mono.deg_p -= 1,
            }
            out.add_term(mono, *v * T::from_f64(f64::from(deg)));
        }
        out
    }

    fn add_term(&mut self, mono: Monomial, coeff: T) {
        if coeff.is_zero() {
            return;
        }
        let entry = self.terms.entry(mono).or_insert_with(T::zero);
        *entry += coeff;
        if entry.is_zero() {
            self.terms.remove(&mono);
        }
    }
}

impl<T: Real> Add for &Poly3<T> {
    type Output = Poly3<T>;

    fn add(self, rhs: &Poly3<T>) -> Poly3<T> {
        let mut out = self.clone();
        for (k, v) in &rhs.terms {
            out.add_term(*k, *v);
        }
        out
    }
}

impl<T: Real> Sub for &Poly3<T> {
    type Output = Poly3<T>;

    fn sub(self, rhs: &Poly3<T>) -> Poly3<T> {
        let mut out = self.clone();
        for (k, v) in &rhs.terms {
            out.add_term(*k, -*v);
        }
        out
    }
}

impl<T: Real> Mul for &Poly3<T> {
    type Output = Poly3<T>;

    fn mul(self, rhs: &Poly3<T>) -> Poly3<T> {
        let mut out = Poly3::zero();
        for (k1, v1) in &self.terms {
            for (k2, v2) in &rhs.terms {
                out.add_term(*k1 * *k2, *v1 * *v2);
            }
        }
        out
    }
}

impl<T: Real> Neg for &Poly3<T> {
    type Output = Poly3<T>;

    fn neg(self) -> Poly3<T> {
        self.scale(-T::one())
    }
}

/// 3x3 matrix of polynomials, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMatrix3<T: Real = f64>(pub [[Poly3<T>; 3]; 3]);

impl<T: Real> PolyMatrix3<T> {
    pub fn from_entries(m: &[[T; 3]; 3]) -> Self {
        PolyMatrix3(std::array::from_fn(|i| {
            std::array::from_fn(|j| Poly3::constant(m[i][j]))
        }))
    }

    pub fn get(&self, i: usize, j: usize) -> &Poly3<T> {
        &self.0[i][j]
    }

    pub fn transpose(&self) -> Self {
        PolyMatrix3(std::array::from_fn(|i| {
            std::array::from_fn(|j| self.0[j][i].clone())
        }))
    }

    pub fn mul(&self, rhs: &PolyMatrix3<T>) -> PolyMatrix3<T> {
        PolyMatrix3(std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let mut acc = Poly3::zero();
                for k in 0..3 {
                    acc = &acc + &(&self.0[i][k] * &rhs.0[k][j]);
                }
                acc
            })
        }))
    }

    pub fn trace(&self) -> Poly3<T> {
        &(&self.0[0][0] + &self.0[1][1]) + &self.0[2][2]
    }
}

impl PolyMatrix3<f64> {
    pub fn from_real(m: &Matrix3<f64>) -> Self {
        PolyMatrix3::from_entries(&std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])))
    }

    pub fn eval(&self, a: f64, b: f64, p: f64) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.0[i][j].eval(a, b, p))
    }
}

/// `w = K K^T` for `K = [[f, 0, a], [0, f, b], [0, 0, 1]]` with `p = f^2`.
pub fn omega_star_symbolic<T: Real>() -> PolyMatrix3<T> {
    let (a, b, p) = (Poly3::var_a(), Poly3::var_b(), Poly3::var_p());
    let ab = &a * &b;
    PolyMatrix3([
        [&(&a * &a) + &p, ab.clone(), a.clone()],
        [ab, &(&b * &b) + &p, b.clone()],
        [a, b, Poly3::constant(T::one())],
    ])
}

/// The full set of expanded constraints: the 3x3 matrix `G` and the trace
/// constraint `f4`.
#[derive(Debug, Clone)]
pub struct ConstraintPolys<T: Real = f64> {
    pub g: PolyMatrix3<T>,
    pub f4: Poly3<T>,
}

impl<T: Real> ConstraintPolys<T> {
    /// `[G11, G22, G33, f4]`.
    pub fn selected(&self) -> [&Poly3<T>; 4] {
        [self.g.get(0, 0), self.g.get(1, 1), self.g.get(2, 2), &self.f4]
    }
}

/// Symbolically expands `G` and `f4` for a given `F` and rotation trace `tau`.
pub fn constraint_polys(f: &Matrix3<f64>, tau: f64) -> ConstraintPolys<f64> {
    constraint_polys_in(&std::array::from_fn(|i| std::array::from_fn(|j| f[(i, j)])), tau)
}

/// [`constraint_polys`] over an arbitrary scalar type.
pub fn constraint_polys_in<T: Real>(f: &[[T; 3]; 3], tau: T) -> ConstraintPolys<T> {
    let w = omega_star_symbolic::<T>();
    let fp = PolyMatrix3::from_entries(f);
    let ft = fp.transpose();
    let half = T::from_f64(0.5);

    // F w F^T w, its trace, and w F.
    let fwftw = fp.mul(&w).mul(&ft).mul(&w);
    let tr_fwftw = fwftw.trace();
    let fwftwf = fwftw.mul(&fp);
    let half_tr = tr_fwftw.scale(half);
    let g = PolyMatrix3(std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            &(&half_tr * &fp.0[i][j]) - &fwftwf.0[i][j]
        })
    }));

    let wf = w.mul(&fp);
    let tr_wf = wf.trace();
    let tr_wfwf = wf.mul(&wf).trace();
    let one = T::one();
    let f4 = &(&tr_fwftw.scale(half * (tau * tau - one)) + &tr_wfwf.scale(tau + one))
        - &(&tr_wf * &tr_wf).scale(tau);

    ConstraintPolys {
        g,
        f4,
    }
}

/// Coefficients of `f1..f4` over the fixed basis [`Y0`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem<T: Real = f64> {
    pub b0: SMatrix<T, 4, 22>,
    pub basis: [Monomial; 22],
}

impl ConstraintSystem<f64> {
    /// Evaluates each row against the monomial vector at `(a, b, p)`.
    pub fn residuals(&self, a: f64, b: f64, p: f64) -> [f64; 4] {
        std::array::from_fn(|r| {
            self.basis
                .iter()
                .enumerate()
                .map(|(c, mono)| self.b0[(r, c)] * mono.eval(a, b, p))
                .sum()
        })
    }
}

/// Builds the 4x22 coefficient matrix of `f1 = G11, f2 = G22, f3 = G33, f4`.
pub fn expand_constraints(f: &Matrix3<f64>, tau: f64) -> Result<ConstraintSystem> {
    expand_constraints_in(&std::array::from_fn(|i| std::array::from_fn(|j| f[(i, j)])), tau)
}

/// [`expand_constraints`] over an arbitrary scalar type.
pub fn expand_constraints_in<T: Real>(f: &[[T; 3]; 3], tau: T) -> Result<ConstraintSystem<T>> {
    let flat = f.iter().flatten().map(|v| v.to_f64());
    if !flat.clone().all(f64::is_finite) || !tau.to_f64().is_finite() {
        return Err(Error::InvalidInput("non-finite F or tau".into()));
    }
    if flat.fold(0.0f64, |m, v| m.max(v.abs())) < 1e-12 {
        return Err(Error::InvalidInput(
            "fundamental matrix is numerically zero".into(),
        ));
    }
    coefficient_rows(&constraint_polys_in(f, tau))
}

/// Places the coefficients of `f1..f4` over [`Y0`]. Terms outside the basis
/// must be rounding noise.
pub fn coefficient_rows<T: Real>(polys: &ConstraintPolys<T>) -> Result<ConstraintSystem<T>> {
    let mut rows = [[T::zero(); 22]; 4];
    for (r, poly) in polys.selected().into_iter().enumerate() {
        let scale = poly.max_abs_coeff();
        for (mono, coeff) in poly.terms() {
            match Y0.iter().position(|&y| y == mono) {
                Some(c) => rows[r][c] = coeff,
                None if coeff.to_f64().abs() <= PRUNE_REL_TOL * scale => {}
                None => {
                    return Err(Error::InvalidInput(format!(
                        "constraint {} has term {mono} outside the monomial basis",
                        r + 1
                    )))
                }
            }
        }
    }
    Ok(ConstraintSystem {
        b0: SMatrix::from_fn(|r, c| rows[r][c]),
        basis: Y0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{quaternion_rotation, skew};
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn omega_numeric(a: f64, b: f64, p: f64) -> Matrix3<f64> {
        Matrix3::new(a * a + p, a * b, a, a * b, b * b + p, b, a, b, 1.0)
    }

    // Direct numeric evaluation of G and f4, independent of the polynomial code.
    fn g_numeric(f: &Matrix3<f64>, w: &Matrix3<f64>) -> Matrix3<f64> {
        let fwftw = f * w * f.transpose() * w;
        fwftw.trace() * 0.5 * f - fwftw * f
    }

    fn f4_numeric(f: &Matrix3<f64>, w: &Matrix3<f64>, tau: f64) -> f64 {
        let tr1 = (f * w * f.transpose() * w).trace();
        let wf = w * f;
        0.5 * (tau * tau - 1.0) * tr1 + (tau + 1.0) * (wf * wf).trace() - tau * wf.trace().powi(2)
    }

    fn synthetic_f(tau_out: &mut f64) -> (Matrix3<f64>, f64, f64, f64) {
        let (a, b, fl) = (0.12, -0.31, 3.4);
        let k = Matrix3::new(fl, 0.0, a, 0.0, fl, b, 0.0, 0.0, 1.0);
        let n = (0.9f64 * 0.9 + 0.2 * 0.2 + 0.1 * 0.1 + 0.05 * 0.05).sqrt();
        let r = quaternion_rotation(0.9 / n, 0.2 / n, -0.1 / n, 0.05 / n);
        let t = Vector3::new(0.3, -0.5, 0.8).normalize();
        let ki = k.try_inverse().unwrap();
        let f = ki.transpose() * skew(&t) * r * ki;
        *tau_out = r.trace();
        (f / f.norm(), a, b, fl * fl)
    }

    #[test]
    fn omega_star_entries() {
        let w = omega_star_symbolic::<f64>();
        assert_eq!(w.get(2, 2), &Poly3::constant(1.0));
        assert_eq!(w.get(0, 2), &Poly3::var_a());
        assert_eq!(w.eval(0.0, 0.0, 1.0), Matrix3::identity());
    }

    #[test]
    fn ground_truth_zeroes_every_row() {
        let mut tau = 0.0;
        let (f, a, b, p) = synthetic_f(&mut tau);
        let sys = expand_constraints(&f, tau).unwrap();
        for (r, res) in sys.residuals(a, b, p).iter().enumerate() {
            let scale: f64 = (0..22)
                .map(|c| (sys.b0[(r, c)] * Y0[c].eval(a, b, p)).abs())
                .sum();
            assert!(res.abs() <= 1e-10 * scale, "row {r}: {res} vs {scale}");
        }
    }

    #[test]
    fn f4_p_squared_coefficient_matches_finite_difference() {
        let mut tau = 0.0;
        let (f, _, _, _) = synthetic_f(&mut tau);
        let sys = expand_constraints(&f, tau).unwrap();
        let col = Y0.iter().position(|&y| y == Monomial::new(0, 0, 2)).unwrap();
        // f4(0, 0, p) is quadratic in p, so the central second difference is exact.
        let h = 0.5;
        let at = |p: f64| f4_numeric(&f, &omega_numeric(0.0, 0.0, p), tau);
        let fd = (at(h) + at(-h) - 2.0 * at(0.0)) / (2.0 * h * h);
        assert!((sys.b0[(3, col)] - fd).abs() <= 1e-12 * fd.abs().max(1.0));
    }

    #[test]
    fn scaling_f_scales_rows_by_degree() {
        let mut tau = 0.0;
        let (f, _, _, _) = synthetic_f(&mut tau);
        let s1 = expand_constraints(&f, tau).unwrap();
        let s2 = expand_constraints(&(2.0 * f), tau).unwrap();
        for c in 0..22 {
            for r in 0..3 {
                assert!((s2.b0[(r, c)] - 8.0 * s1.b0[(r, c)]).abs() <= 1e-12 * s2.b0.amax());
            }
            assert!((s2.b0[(3, c)] - 4.0 * s1.b0[(3, c)]).abs() <= 1e-12 * s2.b0.amax());
        }
    }

    #[test]
    fn rejects_zero_f() {
        assert!(matches!(
            expand_constraints(&Matrix3::zeros(), 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn every_constraint_is_quartic_over_y0() {
        let mut tau = 0.0;
        let (f, _, _, _) = synthetic_f(&mut tau);
        let polys = constraint_polys(&f, tau);
        for i in 0..3 {
            for j in 0..3 {
                let g = polys.g.get(i, j);
                assert!(g.degree().unwrap() <= 4);
                assert!(g.terms().all(|(mono, _)| Y0.contains(&mono)));
            }
        }
        assert!(polys.f4.terms().all(|(mono, _)| Y0.contains(&mono)));
    }

    #[test]
    fn monomial_display() {
        assert_eq!(Monomial::new(2, 1, 0).to_string(), "a^2b");
        assert_eq!(Monomial::ONE.to_string(), "1");
    }

    fn any_matrix() -> impl Strategy<Value = Matrix3<f64>> {
        proptest::array::uniform9(-1.0f64..1.0).prop_map(|v| Matrix3::from_row_slice(&v))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rows_agree_with_numeric_matrix_expression(
            f in any_matrix(),
            tau in -1.0f64..3.0,
            a in -1.0f64..1.0,
            b in -1.0f64..1.0,
            p in 0.1f64..5.0,
        ) {
            prop_assume!(f.amax() > 1e-3);
            let polys = constraint_polys(&f, tau);
            let w = omega_numeric(a, b, p);
            let g = g_numeric(&f, &w);
            let g_poly = polys.g.eval(a, b, p);
            let scale = (f.norm().powi(3) * w.norm().powi(2)).max(1e-300);
            prop_assert!((g - g_poly).amax() <= 1e-9 * scale);

            let f4 = f4_numeric(&f, &w, tau);
            let f4_scale = f.norm_squared() * w.norm_squared() * (1.0 + tau * tau);
            prop_assert!((f4 - polys.f4.eval(a, b, p)).abs() <= 1e-9 * f4_scale);

            // And the B0 rows reproduce the same values.
            let sys = expand_constraints(&f, tau).unwrap();
            let res = sys.residuals(a, b, p);
            prop_assert!((res[0] - g[(0, 0)]).abs() <= 1e-9 * scale);
            prop_assert!((res[1] - g[(1, 1)]).abs() <= 1e-9 * scale);
            prop_assert!((res[2] - g[(2, 2)]).abs() <= 1e-9 * scale);
            prop_assert!((res[3] - f4).abs() <= 1e-9 * f4_scale);
        }

        #[test]
        fn g_annihilates_epipoles(
            u in proptest::array::uniform3(-1.0f64..1.0),
            v in proptest::array::uniform3(-1.0f64..1.0),
            c in proptest::array::uniform3(-1.0f64..1.0),
            a in -1.0f64..1.0,
            b in -1.0f64..1.0,
            p in 0.1f64..5.0,
        ) {
            // Rank-2 F = [u]x M with a random M gives left null vector u.
            let m = Matrix3::new(1.0, v[0], v[1], c[0], 1.0, v[2], c[1], c[2], 1.0);
            let uu = Vector3::from(u);
            prop_assume!(uu.norm() > 0.1 && m.determinant().abs() > 1e-2);
            let f = skew(&uu) * m;
            let svd = f.svd(true, true);
            let idx = svd.singular_values.imin();
            let e = svd.v_t.unwrap().row(idx).transpose();
            let e_left = svd.u.unwrap().column(idx).into_owned();
            let g = constraint_polys(&f, 1.0).g.eval(a, b, p);
            prop_assert!((g * e).norm() <= 1e-9 * g.norm());
            prop_assert!((g.transpose() * e_left).norm() <= 1e-9 * g.norm());
        }
    }
}
