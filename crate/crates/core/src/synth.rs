//! Synthetic scenes, the noise models, and the trial driver behind the
//! accuracy, solution-count and noise studies.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{direction_angle, rotation_distance, skew};
use crate::gyro::{constant_rate_samples, rodrigues_exp, GyroSample};
use crate::pipeline::{estimate_pair, median, relative_k_error, rows_matrix, Rows3};
use crate::pose::RelativePose;
use crate::twoview::Correspondence;

/// Placement attempts allowed per requested point.
pub const ATTEMPTS_PER_POINT: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub distance_to_scene: f64,
    pub scene_depth: f64,
    pub baseline_length: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub n_points: usize,
    pub k_gt: Rows3,
    /// Radians; the angle is drawn uniformly from this range.
    pub rotation_angle_range: (f64, f64),
    /// Fixed angle in radians, overriding the range.
    pub rotation_angle: Option<f64>,
    /// Fixed rotation axis; uniform on the sphere otherwise.
    pub rotation_axis: Option<[f64; 3]>,
    /// Fixed translation direction; uniform on the sphere otherwise.
    pub translation_direction: Option<[f64; 3]>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            distance_to_scene: 1.0,
            scene_depth: 0.5,
            baseline_length: 0.1,
            image_width: 1280.0,
            image_height: 720.0,
            n_points: 20,
            k_gt: [[1000.0, 0.0, 640.0], [0.0, 1000.0, 360.0], [0.0, 0.0, 1.0]],
            rotation_angle_range: (5f64.to_radians(), 30f64.to_radians()),
            rotation_angle: None,
            rotation_axis: None,
            translation_direction: None,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn k(&self) -> Matrix3<f64> {
        rows_matrix(&self.k_gt)
    }

    pub fn validate(&self) -> Result<()> {
        let lengths = [
            self.distance_to_scene,
            self.scene_depth,
            self.baseline_length,
            self.image_width,
            self.image_height,
        ];
        if lengths.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput("scene lengths must be positive".into()));
        }
        if self.scene_depth >= 2.0 * self.distance_to_scene {
            return Err(Error::InvalidInput("scene reaches behind the first camera".into()));
        }
        if self.n_points < 7 {
            return Err(Error::InvalidInput(format!(
                "need at least 7 points, got {}",
                self.n_points
            )));
        }
        let (lo, hi) = self.rotation_angle_range;
        if !(0.0 <= lo && lo <= hi && hi <= std::f64::consts::PI) {
            return Err(Error::InvalidInput("rotation angle range must lie in [0, pi]".into()));
        }
        if self.k().try_inverse().is_none() {
            return Err(Error::InvalidInput("k_gt is singular".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Pixels, applied to every coordinate of both views.
    pub image_sigma: f64,
    /// Standard deviation of `s` in `theta (1 + s)`.
    pub angle_sigma: f64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.image_sigma >= 0.0 && self.angle_sigma >= 0.0) {
            return Err(Error::InvalidInput("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ground truth and projections for one synthetic pair; `X2 = R X + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub k: Matrix3<f64>,
    pub points: Vec<Vector3<f64>>,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub axis: Vector3<f64>,
    /// Radians.
    pub theta: f64,
    pub correspondences: Vec<Correspondence>,
}

impl Scene {
    pub fn pose(&self) -> RelativePose {
        RelativePose::new(self.r, self.t)
    }

    pub fn tau(&self) -> f64 {
        self.r.trace()
    }

    /// `K^-T [t]x R K^-1`.
    pub fn fundamental(&self) -> Matrix3<f64> {
        let k_inv = self.k.try_inverse().expect("validated K");
        k_inv.transpose() * skew(&self.t) * self.r * k_inv
    }

    /// Constant rate about the rotation axis that integrates to `R` over
    /// `duration` seconds.
    pub fn gyro_samples(&self, duration: f64, rate_hz: f64) -> Vec<GyroSample> {
        constant_rate_samples(self.axis * (self.theta / duration), duration, rate_hz)
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn fixed_unit(v: &Option<[f64; 3]>, what: &str) -> Result<Option<Vector3<f64>>> {
    match v {
        None => Ok(None),
        Some(v) => {
            let v = Vector3::from(*v);
            let n = v.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::InvalidInput(format!("{what} must be a non-zero vector")));
            }
            Ok(Some(v / n))
        }
    }
}

/// Draws a rotation and translation, then points uniformly in a box of the
/// configured depth centered at the configured distance, whose lateral
/// extent is the first camera's field of view at that distance. Points that
/// do not project inside both images are redrawn.
pub fn generate_scene<R: Rng + ?Sized>(cfg: &SceneConfig, rng: &mut R) -> Result<Scene> {
    cfg.validate()?;
    let k = cfg.k();
    let axis = match fixed_unit(&cfg.rotation_axis, "rotation axis")? {
        Some(a) => a,
        None => unit_vector(rng),
    };
    let theta = match cfg.rotation_angle {
        Some(a) => a,
        None => {
            let (lo, hi) = cfg.rotation_angle_range;
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        }
    };
    let t_dir = match fixed_unit(&cfg.translation_direction, "translation direction")? {
        Some(t) => t,
        None => unit_vector(rng),
    };
    let r = rodrigues_exp(&(axis * theta));
    let t = t_dir * cfg.baseline_length;

    let (fx, fy) = (k[(0, 0)], k[(1, 1)]);
    let (cx, cy) = (k[(0, 2)], k[(1, 2)]);
    let d = cfg.distance_to_scene;
    let x_range = (-cx / fx * d, (cfg.image_width - cx) / fx * d);
    let y_range = (-cy / fy * d, (cfg.image_height - cy) / fy * d);
    let z_range = (d - cfg.scene_depth / 2.0, d + cfg.scene_depth / 2.0);
    let inside = |q: Vector3<f64>| {
        q.z > 0.0 && {
            let (u, v) = (q.x / q.z, q.y / q.z);
            (0.0..=cfg.image_width).contains(&u) && (0.0..=cfg.image_height).contains(&v)
        }
    };

    let mut points = Vec::with_capacity(cfg.n_points);
    let mut correspondences = Vec::with_capacity(cfg.n_points);
    let mut attempts = 0;
    while points.len() < cfg.n_points {
        if attempts == ATTEMPTS_PER_POINT * cfg.n_points {
            return Err(Error::Degenerate(format!(
                "placed only {} of {} points inside both images",
                points.len(),
                cfg.n_points
            )));
        }
        attempts += 1;
        let x = Vector3::new(
            rng.random_range(x_range.0..x_range.1),
            rng.random_range(y_range.0..y_range.1),
            rng.random_range(z_range.0..z_range.1),
        );
        let q = k * x;
        let qp = k * (r * x + t);
        if inside(q) && inside(qp) {
            points.push(x);
            correspondences.push(Correspondence::from_homogeneous(q, qp)?);
        }
    }
    Ok(Scene {
        k,
        points,
        r,
        t,
        axis,
        theta,
        correspondences,
    })
}

/// Gaussian pixel noise on both views and `theta (1 + s)`, `s ~ N(0, sigma)`.
/// Draws are made even at zero noise so streams line up across levels.
pub fn add_noise<R: Rng + ?Sized>(
    points: &[Correspondence],
    noise: &NoiseConfig,
    theta: f64,
    rng: &mut R,
) -> (Vec<Correspondence>, f64) {
    let mut n = |sigma: f64| sigma * rng.sample::<f64, _>(StandardNormal);
    let noisy = points
        .iter()
        .map(|c| {
            let (dx, dy) = (n(noise.image_sigma), n(noise.image_sigma));
            let (dxp, dyp) = (n(noise.image_sigma), n(noise.image_sigma));
            Correspondence::new(c.q.x + dx, c.q.y + dy, c.q_prime.x + dxp, c.q_prime.y + dyp)
        })
        .collect();
    let s = n(noise.angle_sigma);
    (noisy, theta * (1.0 + s))
}

/// Outcome of one trial. Failures carry an infinite error and a message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u64,
    /// Minimum over real roots of `||K - K_gt||_F / ||K_gt||_F`.
    pub relative_k_error: f64,
    pub n_solutions: usize,
    pub n_real_solutions: usize,
    pub n_feasible_solutions: usize,
    pub rotation_error_deg: f64,
    pub translation_error_deg: f64,
    /// Seconds spent in the estimation chain.
    pub runtime: f64,
    pub failure: String,
}

impl TrialResult {
    fn failed(trial: u64, message: String, runtime: f64) -> Self {
        TrialResult {
            trial,
            relative_k_error: f64::INFINITY,
            n_solutions: 0,
            n_real_solutions: 0,
            n_feasible_solutions: 0,
            rotation_error_deg: f64::INFINITY,
            translation_error_deg: f64::INFINITY,
            runtime,
            failure: message,
        }
    }

    pub fn is_failure(&self) -> bool {
        !self.failure.is_empty()
    }
}

/// Generator for trial `index`: the configured seed with a per-trial stream,
/// so parallel and serial runs draw the same numbers.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn run_trial(scene_cfg: &SceneConfig, noise: &NoiseConfig, index: u64) -> TrialResult {
    let mut rng = trial_rng(scene_cfg.seed, index);
    let scene = match generate_scene(scene_cfg, &mut rng) {
        Ok(s) => s,
        Err(e) => return TrialResult::failed(index, e.to_string(), 0.0),
    };
    let (points, theta) = add_noise(&scene.correspondences, noise, scene.theta, &mut rng);
    let tau = 2.0 * theta.cos() + 1.0;
    let start = Instant::now();
    let est = estimate_pair(&points, tau);
    let runtime = start.elapsed().as_secs_f64();
    let est = match est {
        Ok(e) => e,
        Err(e) => return TrialResult::failed(index, e.to_string(), runtime),
    };
    let best = est
        .candidates
        .iter()
        .map(|c| (relative_k_error(&c.k, &scene.k), c))
        .min_by(|x, y| x.0.total_cmp(&y.0));
    let (err, rot, trans) = match best {
        Some((err, c)) => match &c.pose {
            Ok(p) => (
                err,
                rotation_distance(&p.pose.r, &scene.r).to_degrees(),
                direction_angle(&p.pose.t, &scene.t).to_degrees(),
            ),
            Err(_) => (err, f64::INFINITY, f64::INFINITY),
        },
        None => (f64::INFINITY, f64::INFINITY, f64::INFINITY),
    };
    TrialResult {
        trial: index,
        relative_k_error: err,
        n_solutions: est.n_solutions,
        n_real_solutions: est.n_real,
        n_feasible_solutions: est.n_feasible(),
        rotation_error_deg: rot,
        translation_error_deg: trans,
        runtime,
        failure: String::new(),
    }
}

/// Trials `0..n_trials`, in parallel, returned in trial order.
pub fn run_trials(scene_cfg: &SceneConfig, noise: &NoiseConfig, n_trials: usize) -> Vec<TrialResult> {
    (0..n_trials as u64)
        .into_par_iter()
        .map(|i| run_trial(scene_cfg, noise, i))
        .collect()
}

/// Aggregate statistics; runtimes are left out so summaries are
/// reproducible bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_trials: usize,
    pub n_failures: usize,
    pub median_rel_k_error: f64,
    pub median_rotation_error_deg: f64,
    pub median_translation_error_deg: f64,
    /// Trials whose solver produced exactly six roots.
    pub n_with_six_solutions: usize,
    /// Index `i` counts trials with `i` real roots (last bin: `>= 6`).
    pub real_solutions_histogram: [usize; 7],
    pub feasible_solutions_histogram: [usize; 7],
}

pub fn summarize(results: &[TrialResult]) -> Summary {
    let med = |f: fn(&TrialResult) -> f64| {
        let mut v: Vec<f64> = results.iter().map(f).collect();
        median(&mut v)
    };
    let hist = |f: fn(&TrialResult) -> usize| {
        let mut h = [0usize; 7];
        for r in results.iter().filter(|r| !r.is_failure()) {
            h[f(r).min(6)] += 1;
        }
        h
    };
    Summary {
        n_trials: results.len(),
        n_failures: results.iter().filter(|r| r.is_failure()).count(),
        median_rel_k_error: med(|r| r.relative_k_error),
        median_rotation_error_deg: med(|r| r.rotation_error_deg),
        median_translation_error_deg: med(|r| r.translation_error_deg),
        n_with_six_solutions: results.iter().filter(|r| r.n_solutions == 6).count(),
        real_solutions_histogram: hist(|r| r.n_real_solutions),
        feasible_solutions_histogram: hist(|r| r.n_feasible_solutions),
    }
}

/// Sample standard deviation.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(seed: u64) -> Scene {
        generate_scene(&SceneConfig::default(), &mut trial_rng(seed, 0)).unwrap()
    }

    #[test]
    fn projections_satisfy_ground_truth_epipolar_geometry() {
        for seed in 0..20 {
            let s = scene(seed);
            let f = s.fundamental();
            let f = f / f.norm();
            for c in &s.correspondences {
                let r = c.q_prime.dot(&(f * c.q)).abs() / (c.q.norm() * c.q_prime.norm());
                assert!(r <= 1e-10, "seed {seed}: {r:e}");
            }
        }
    }

    #[test]
    fn points_lie_in_box_and_both_images() {
        let cfg = SceneConfig::default();
        let s = scene(3);
        assert_eq!(s.points.len(), 20);
        for (x, c) in s.points.iter().zip(&s.correspondences) {
            assert!((0.75..=1.25).contains(&x.z));
            for q in [c.q, c.q_prime] {
                assert!((0.0..=cfg.image_width).contains(&q.x));
                assert!((0.0..=cfg.image_height).contains(&q.y));
            }
        }
        assert!((s.t.norm() - 0.1).abs() < 1e-15);
        let deg = s.theta.to_degrees();
        assert!((5.0..=30.0).contains(&deg));
    }

    #[test]
    fn pure_sideways_translation_puts_epipole_at_infinity() {
        let cfg = SceneConfig {
            rotation_angle: Some(0.0),
            translation_direction: Some([1.0, 0.0, 0.0]),
            ..SceneConfig::default()
        };
        let s = generate_scene(&cfg, &mut trial_rng(1, 0)).unwrap();
        // Right null vector of F, found directly from the SVD.
        let svd = s.fundamental().svd(true, true);
        let i = svd.singular_values.imin();
        let e = svd.v_t.unwrap().row(i).transpose();
        assert!(e.z.abs() < 1e-12 && e.y.abs() < 1e-12);
        assert!((e.x.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scenes_are_deterministic() {
        assert_eq!(scene(7), scene(7));
        assert_ne!(scene(7).correspondences, scene(8).correspondences);
    }

    #[test]
    fn unplaceable_points_are_reported() {
        let cfg = SceneConfig {
            rotation_angle: Some(std::f64::consts::PI),
            rotation_axis: Some([0.0, 1.0, 0.0]),
            ..SceneConfig::default()
        };
        assert!(matches!(
            generate_scene(&cfg, &mut trial_rng(0, 0)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            SceneConfig { n_points: 6, ..SceneConfig::default() },
            SceneConfig { baseline_length: 0.0, ..SceneConfig::default() },
            SceneConfig { rotation_angle_range: (0.5, 0.1), ..SceneConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let s = scene(2);
        let (noisy, theta) = add_noise(&s.correspondences, &NoiseConfig::default(), s.theta, &mut trial_rng(0, 1));
        assert_eq!(noisy, s.correspondences);
        assert_eq!(theta, s.theta);
    }

    #[test]
    fn pixel_noise_has_configured_std() {
        let sigma = 0.7;
        let base = vec![Correspondence::new(0.0, 0.0, 0.0, 0.0); 25_000];
        let noise = NoiseConfig { image_sigma: sigma, angle_sigma: 0.0 };
        let (noisy, _) = add_noise(&base, &noise, 1.0, &mut trial_rng(11, 0));
        let values: Vec<f64> = noisy
            .iter()
            .flat_map(|c| [c.q.x, c.q.y, c.q_prime.x, c.q_prime.y])
            .collect();
        assert_eq!(values.len(), 100_000);
        assert!((sample_std(&values) / sigma - 1.0).abs() < 0.02);
    }

    #[test]
    fn angle_noise_is_multiplicative_with_configured_std() {
        let sigma = 0.06;
        let noise = NoiseConfig { image_sigma: 0.0, angle_sigma: sigma };
        let mut rng = trial_rng(12, 0);
        let theta = 0.3;
        let ratios: Vec<f64> = (0..100_000)
            .map(|_| add_noise(&[], &noise, theta, &mut rng).1 / theta - 1.0)
            .collect();
        assert!((sample_std(&ratios) / sigma - 1.0).abs() < 0.02);
    }

    #[test]
    fn gyro_samples_integrate_to_scene_rotation() {
        let s = scene(5);
        let est = crate::gyro::integrate(&s.gyro_samples(1.0, 200.0)).unwrap();
        assert!(rotation_distance(&est.r, &s.r) < 1e-12);
    }

    #[test]
    fn noise_free_trials_recover_calibration() {
        let cfg = SceneConfig { seed: 42, ..SceneConfig::default() };
        let results = run_trials(&cfg, &NoiseConfig::default(), 40);
        let summary = summarize(&results);
        assert_eq!(summary.n_failures, 0);
        assert!(summary.median_rel_k_error < 1e-9, "{summary:?}");
        assert!(summary.median_rotation_error_deg < 1e-6);
        assert!(summary.median_translation_error_deg < 1e-6);
        assert_eq!(summary.n_with_six_solutions, 40);
    }

    #[test]
    fn parallel_and_serial_runs_agree() {
        let cfg = SceneConfig { seed: 9, ..SceneConfig::default() };
        let noise = NoiseConfig { image_sigma: 0.5, angle_sigma: 0.03 };
        let parallel = run_trials(&cfg, &noise, 8);
        let serial: Vec<TrialResult> = (0..8).map(|i| run_trial(&cfg, &noise, i)).collect();
        let strip = |v: &[TrialResult]| -> Vec<TrialResult> {
            v.iter().cloned().map(|r| TrialResult { runtime: 0.0, ..r }).collect()
        };
        assert_eq!(strip(&parallel), strip(&serial));
        assert_eq!(summarize(&parallel), summarize(&serial));
    }

    #[test]
    fn summary_counts_failures_as_infinite() {
        let mut results = vec![TrialResult::failed(0, "x".into(), 0.0); 3];
        results[0] = TrialResult { relative_k_error: 1e-9, failure: String::new(), ..results[0].clone() };
        let s = summarize(&results);
        assert_eq!(s.n_failures, 2);
        assert_eq!(s.median_rel_k_error, f64::INFINITY);
    }
}
