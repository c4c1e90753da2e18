//! Real roots of low-degree univariate polynomials.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Relative discriminant below which the closed form hands over to the
/// companion matrix.
const DISCRIMINANT_REL_TOL: f64 = 1e-10;

/// Complex roots of `c[0] + c[1] x + ... + c[n] x^n` from the eigenvalues of
/// the companion matrix. Leading zero coefficients are stripped.
pub fn companion_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let mut n = coeffs.len();
    while n > 0 && coeffs[n - 1] == 0.0 {
        n -= 1;
    }
    if n <= 1 {
        return Vec::new();
    }
    let deg = n - 1;
    let lead = coeffs[deg];
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -coeffs[i] / lead;
    }
    comp.complex_eigenvalues().iter().copied().collect()
}

/// Real roots of `c0 + c1 x + c2 x^2 + c3 x^3`, ascending.
///
/// Uses the trigonometric / Cardano closed form; when the discriminant is
/// near zero (colliding roots) the companion matrix is used instead. Degree
/// drops are handled when `c3` is negligible.
pub fn real_cubic_roots(c0: f64, c1: f64, c2: f64, c3: f64) -> Vec<f64> {
    let scale = c0.abs().max(c1.abs()).max(c2.abs()).max(c3.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if c3.abs() <= 1e-14 * scale {
        return real_quadratic_roots(c0, c1, c2);
    }
    let (a, b, c) = (c2 / c3, c1 / c3, c0 / c3);
    // Depressed cubic t^3 + p t + q with x = t - a/3.
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let disc = -(4.0 * p * p * p + 27.0 * q * q);
    let disc_scale = 4.0 * (p * p * p).abs() + 27.0 * q * q;

    let mut roots = if disc_scale > 0.0 && disc.abs() < DISCRIMINANT_REL_TOL * disc_scale {
        companion_roots(&[c0, c1, c2, c3])
            .into_iter()
            .filter(|z| z.im.abs() <= 1e-7 * (1.0 + z.re.abs()))
            .map(|z| z.re)
            .collect()
    } else if disc > 0.0 {
        let r = 2.0 * (-p / 3.0).sqrt();
        let phi = (3.0 * q / (p * r)).clamp(-1.0, 1.0).acos() / 3.0;
        (0..3)
            .map(|k| r * (phi - 2.0 * std::f64::consts::PI * f64::from(k) / 3.0).cos() - a / 3.0)
            .collect()
    } else {
        let s = (q * q / 4.0 + p * p * p / 27.0).sqrt();
        let t = (-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt();
        vec![t - a / 3.0]
    };
    for x in &mut roots {
        *x = newton_polish(&[c0, c1, c2, c3], *x);
    }
    roots.sort_by(f64::total_cmp);
    roots
}

fn real_quadratic_roots(c0: f64, c1: f64, c2: f64) -> Vec<f64> {
    if c2 == 0.0 {
        return if c1 == 0.0 { Vec::new() } else { vec![-c0 / c1] };
    }
    let disc = c1 * c1 - 4.0 * c2 * c0;
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (c1 + c1.signum() * disc.sqrt());
    let mut r = if q == 0.0 {
        vec![0.0, 0.0]
    } else {
        vec![q / c2, c0 / q]
    };
    r.sort_by(f64::total_cmp);
    r
}

fn newton_polish(coeffs: &[f64], x: f64) -> f64 {
    let eval = |x: f64| {
        let mut v = 0.0;
        let mut d = 0.0;
        for &c in coeffs.iter().rev() {
            d = d * x + v;
            v = v * x + c;
        }
        (v, d)
    };
    let (v0, d0) = eval(x);
    if d0 == 0.0 || !d0.is_finite() {
        return x;
    }
    let cand = x - v0 / d0;
    if eval(cand).0.abs() < v0.abs() {
        cand
    } else {
        x
    }
}
