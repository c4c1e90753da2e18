//! End-to-end two-view calibration: normalization, fundamental matrix,
//! self-calibration, denormalization, pose, and the per-pair filters.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbsolver::{solve, CalibrationSolution};
use crate::gyro::angle_from_tau;
use crate::pose::{decompose_essential, essential_from_f, PoseEstimate, TRACE_TOLERANCE};
use crate::twoview::{
    normalize, solve_fundamental_7pt, solve_fundamental_npt, Correspondence, FundamentalMatrix,
    NormalizationTransform,
};

/// One real root of the self-calibration system, mapped back to pixels.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// Index into [`PairEstimate::fundamentals`].
    pub fundamental: usize,
    /// Solution in normalized image coordinates.
    pub normalized: CalibrationSolution,
    /// Calibration matrix in pixels.
    pub k: Matrix3<f64>,
    pub feasible: bool,
    /// Pose from the feasible root, or why it could not be recovered.
    pub pose: std::result::Result<PoseEstimate, String>,
}

impl Candidate {
    pub fn principal_point(&self) -> (f64, f64) {
        (self.k[(0, 2)], self.k[(1, 2)])
    }

    pub fn focal_length(&self) -> f64 {
        self.k[(0, 0)]
    }
}

/// Unfiltered result of running the solver chain on one image pair.
#[derive(Debug, Clone)]
pub struct PairEstimate {
    pub normalization: NormalizationTransform,
    /// Fundamental matrices in pixels (several for seven points).
    pub fundamentals: Vec<FundamentalMatrix>,
    /// Roots over the complex numbers, summed over fundamental matrices.
    pub n_solutions: usize,
    pub n_real: usize,
    pub candidates: Vec<Candidate>,
}

impl PairEstimate {
    pub fn n_feasible(&self) -> usize {
        self.candidates.iter().filter(|c| c.feasible).count()
    }
}

/// Median Sampson distance of the matches to `f`, in pixels.
pub fn median_sampson_distance(f: &FundamentalMatrix, points: &[Correspondence]) -> f64 {
    let f = f.matrix();
    let mut d: Vec<f64> = points
        .iter()
        .map(|c| {
            let fq = f * c.q;
            let ftq = f.transpose() * c.q_prime;
            let num = c.q_prime.dot(&fq);
            let den = fq.x * fq.x + fq.y * fq.y + ftq.x * ftq.x + ftq.y * ftq.y;
            if den > 0.0 {
                num.abs() / den.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    median(&mut d)
}

/// Median of finite and infinite values; NaN sorts last. Empty gives NaN.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs normalize, fundamental matrix (seven-point for exactly seven
/// matches, linear otherwise), self-calibration, denormalization and pose
/// recovery on every real root.
pub fn estimate_pair(points: &[Correspondence], tau: f64) -> Result<PairEstimate> {
    let (s, normalized) = normalize(points)?;
    let fs = if normalized.len() == 7 {
        solve_fundamental_7pt(&normalized)?
    } else {
        vec![solve_fundamental_npt(&normalized)?]
    };
    if fs.is_empty() {
        return Err(Error::Degenerate("no real fundamental matrix".into()));
    }
    let s_inv = s.inverse_matrix();
    let mut out = PairEstimate {
        normalization: s,
        fundamentals: Vec::with_capacity(fs.len()),
        n_solutions: 0,
        n_real: 0,
        candidates: Vec::new(),
    };
    let mut last_err = None;
    for f_n in &fs {
        let output = match solve(f_n, tau) {
            Ok(o) => o,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let index = out.fundamentals.len();
        out.fundamentals.push(FundamentalMatrix::new(s.denormalize_fundamental(f_n.matrix()))?);
        out.n_solutions += output.roots.len();
        out.n_real += output.n_real();
        for root in output.roots.iter().filter(|r| r.is_real()) {
            let sol = CalibrationSolution::new(root.a.re, root.b.re, root.p.re);
            let feasible = root.is_feasible();
            let k_n = sol.k();
            let pose = if feasible {
                pose_for(f_n, &k_n, &normalized, tau).map_err(|e| e.to_string())
            } else {
                Err("infeasible root".to_string())
            };
            out.candidates.push(Candidate {
                fundamental: index,
                normalized: sol,
                k: s_inv * k_n,
                feasible,
                pose,
            });
        }
    }
    if out.fundamentals.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::Degenerate("solver failed".into())));
    }
    Ok(out)
}

fn pose_for(
    f_n: &FundamentalMatrix,
    k_n: &Matrix3<f64>,
    normalized: &[Correspondence],
    tau: f64,
) -> Result<PoseEstimate> {
    let e = essential_from_f(f_n, k_n)?;
    let k_inv = k_n
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("calibration matrix is singular".into()))?;
    let rays: Vec<(Vector3<f64>, Vector3<f64>)> = normalized
        .iter()
        .map(|c| (k_inv * c.q, k_inv * c.q_prime))
        .collect();
    decompose_essential(&e, &rays, tau)
}

/// Filters applied by [`calibrate_pair`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairOptions {
    /// Pairs whose rotation angle is below this are rejected.
    pub min_angle_deg: f64,
    /// Half-width of the principal-point window around `center`.
    pub pp_window_px: f64,
    /// Window center; `None` disables the principal-point filter.
    pub center: Option<(f64, f64)>,
    /// Largest accepted median Sampson distance, in pixels.
    pub max_residual_px: f64,
    /// Largest accepted `|tr R - tau|`.
    pub trace_tolerance: f64,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            min_angle_deg: 5.0,
            pp_window_px: 50.0,
            center: None,
            max_residual_px: 2.0,
            trace_tolerance: TRACE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Accepted,
    AngleBelowThreshold,
    Degenerate,
    ResidualTooLarge,
    NoFeasibleSolution,
    PrincipalPointOutsideWindow,
    Cheirality,
    TraceMismatch,
}

impl PairStatus {
    pub fn is_accepted(self) -> bool {
        self == PairStatus::Accepted
    }
}

impl std::fmt::Display for PairStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PairStatus::Accepted => "accepted",
            PairStatus::AngleBelowThreshold => "rejected: angle below threshold",
            PairStatus::Degenerate => "rejected: degenerate configuration",
            PairStatus::ResidualTooLarge => "rejected: epipolar residual above threshold",
            PairStatus::NoFeasibleSolution => "rejected: no feasible solution",
            PairStatus::PrincipalPointOutsideWindow => "rejected: principal point outside window",
            PairStatus::Cheirality => "rejected: cheirality",
            PairStatus::TraceMismatch => "rejected: rotation trace differs from tau",
        };
        f.write_str(s)
    }
}

pub type Rows3 = [[f64; 3]; 3];

pub fn matrix_rows(m: &Matrix3<f64>) -> Rows3 {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

pub fn rows_matrix(r: &Rows3) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

/// Feasible root as listed in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub k: Rows3,
    pub focal_length: f64,
    pub principal_point: (f64, f64),
    pub in_window: bool,
    pub cheirality_ok: bool,
    pub positive_depth: usize,
    pub trace_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub name: String,
    pub status: PairStatus,
    pub message: String,
    pub tau: f64,
    pub theta_deg: f64,
    pub k: Option<Rows3>,
    pub r: Option<Rows3>,
    pub t: Option<[f64; 3]>,
    pub trace_deviation: Option<f64>,
    pub positive_depth: Option<usize>,
    pub n_points: usize,
    pub n_solutions: usize,
    pub n_real: usize,
    pub n_feasible: usize,
    pub epipolar_residual_px: Option<f64>,
    pub candidates: Vec<CandidateReport>,
}

impl PairReport {
    fn new(name: &str, tau: f64, n_points: usize) -> Self {
        PairReport {
            name: name.to_string(),
            status: PairStatus::Degenerate,
            message: String::new(),
            tau,
            theta_deg: angle_from_tau(tau).to_degrees(),
            k: None,
            r: None,
            t: None,
            trace_deviation: None,
            positive_depth: None,
            n_points,
            n_solutions: 0,
            n_real: 0,
            n_feasible: 0,
            epipolar_residual_px: None,
            candidates: Vec::new(),
        }
    }

    fn finish(mut self, status: PairStatus) -> Self {
        self.status = status;
        if self.message.is_empty() {
            self.message = status.to_string();
        }
        self
    }
}

/// Calibrates one pair and applies the angle, residual, principal-point,
/// cheirality and trace filters. Among the survivors the root with the
/// smallest `|tr R - tau|` wins, ties going to more points in front.
pub fn calibrate_pair(
    name: &str,
    points: &[Correspondence],
    tau: f64,
    options: &PairOptions,
) -> PairReport {
    let mut report = PairReport::new(name, tau, points.len());
    if !(-1.0..=3.0).contains(&tau) {
        report.message = format!("tau {tau} outside [-1, 3]");
        return report.finish(PairStatus::Degenerate);
    }
    if report.theta_deg < options.min_angle_deg {
        return report.finish(PairStatus::AngleBelowThreshold);
    }
    let est = match estimate_pair(points, tau) {
        Ok(e) => e,
        Err(e) => {
            report.message = e.to_string();
            return report.finish(PairStatus::Degenerate);
        }
    };
    report.n_solutions = est.n_solutions;
    report.n_real = est.n_real;
    report.n_feasible = est.n_feasible();
    let residuals: Vec<f64> = est
        .fundamentals
        .iter()
        .map(|f| median_sampson_distance(f, points))
        .collect();
    let residual = residuals.iter().copied().fold(f64::INFINITY, f64::min);
    report.epipolar_residual_px = Some(residual);

    let in_window = |c: &Candidate| match options.center {
        Some((cx, cy)) => {
            let (a, b) = c.principal_point();
            (a - cx).abs() < options.pp_window_px && (b - cy).abs() < options.pp_window_px
        }
        None => true,
    };
    let feasible: Vec<&Candidate> = est.candidates.iter().filter(|c| c.feasible).collect();
    report.candidates = feasible
        .iter()
        .map(|c| CandidateReport {
            k: matrix_rows(&c.k),
            focal_length: c.focal_length(),
            principal_point: c.principal_point(),
            in_window: in_window(c),
            cheirality_ok: c.pose.is_ok(),
            positive_depth: c.pose.as_ref().map(|p| p.positive).unwrap_or(0),
            trace_deviation: c.pose.as_ref().ok().map(|p| p.trace_deviation),
        })
        .collect();

    if !(residual <= options.max_residual_px) {
        return report.finish(PairStatus::ResidualTooLarge);
    }
    if feasible.is_empty() {
        return report.finish(PairStatus::NoFeasibleSolution);
    }
    let windowed: Vec<&Candidate> = feasible.into_iter().filter(|c| in_window(c)).collect();
    if windowed.is_empty() {
        return report.finish(PairStatus::PrincipalPointOutsideWindow);
    }
    let posed: Vec<(&Candidate, &PoseEstimate)> = windowed
        .iter()
        .filter_map(|c| c.pose.as_ref().ok().map(|p| (*c, p)))
        .collect();
    if posed.is_empty() {
        return report.finish(PairStatus::Cheirality);
    }
    let best = posed
        .iter()
        .filter(|(_, p)| p.trace_consistent(options.trace_tolerance))
        .min_by(|(_, p), (_, q)| {
            p.trace_deviation
                .abs()
                .total_cmp(&q.trace_deviation.abs())
                .then(q.positive.cmp(&p.positive))
        });
    let Some((c, p)) = best else {
        return report.finish(PairStatus::TraceMismatch);
    };
    report.k = Some(matrix_rows(&c.k));
    report.r = Some(matrix_rows(&p.pose.r));
    report.t = Some([p.pose.t.x, p.pose.t.y, p.pose.t.z]);
    report.trace_deviation = Some(p.trace_deviation);
    report.positive_depth = Some(p.positive);
    report.finish(PairStatus::Accepted)
}

/// All pairs plus the element-wise mean `K` over the accepted ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub pairs: Vec<PairReport>,
    pub n_accepted: usize,
    pub aggregate_k: Option<Rows3>,
}

impl CalibrationReport {
    pub fn from_pairs(pairs: Vec<PairReport>) -> Self {
        let accepted: Vec<Matrix3<f64>> = pairs
            .iter()
            .filter(|p| p.status.is_accepted())
            .filter_map(|p| p.k.as_ref().map(rows_matrix))
            .collect();
        let aggregate_k = (!accepted.is_empty()).then(|| {
            let sum = accepted.iter().fold(Matrix3::zeros(), |acc, k| acc + k);
            matrix_rows(&(sum / accepted.len() as f64))
        });
        CalibrationReport {
            n_accepted: accepted.len(),
            pairs,
            aggregate_k,
        }
    }
}

/// `||K - K_gt||_F / ||K_gt||_F`.
pub fn relative_k_error(k: &Matrix3<f64>, k_gt: &Matrix3<f64>) -> f64 {
    (k - k_gt).norm() / k_gt.norm()
}
