//! Gyroscope integration: angular-rate samples to a relative rotation, its
//! angle and trace.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{nearest_rotation, rotation_angle, skew};

/// Steps between re-orthonormalizations of the running rotation.
pub const REORTHONORMALIZE_EVERY: usize = 256;

/// One angular-rate reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GyroSample {
    /// Seconds.
    pub timestamp: f64,
    /// Rad/s.
    pub omega: Vector3<f64>,
}

impl GyroSample {
    pub fn new(timestamp: f64, wx: f64, wy: f64, wz: f64) -> Self {
        GyroSample {
            timestamp,
            omega: Vector3::new(wx, wy, wz),
        }
    }
}

/// Integrated rotation with its angle and trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationEstimate {
    pub r: Matrix3<f64>,
    /// Radians in `[0, pi]`.
    pub theta: f64,
    /// `tr R = 2 cos(theta) + 1`.
    pub tau: f64,
}

impl RotationEstimate {
    pub fn from_rotation(r: Matrix3<f64>) -> Self {
        let theta = rotation_angle(&r);
        RotationEstimate {
            r,
            theta,
            tau: tau_from_angle(theta),
        }
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta.to_degrees()
    }
}

/// `2 cos(theta) + 1`.
pub fn tau_from_angle(theta: f64) -> f64 {
    2.0 * theta.cos() + 1.0
}

/// `arccos((tau - 1) / 2)`, with the argument clamped to `[-1, 1]`.
pub fn angle_from_tau(tau: f64) -> f64 {
    ((tau - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// `exp([v]x)` by the Rodrigues formula; `v` is axis times angle.
pub fn rodrigues_exp(v: &Vector3<f64>) -> Matrix3<f64> {
    let angle = v.norm();
    if angle == 0.0 {
        return Matrix3::identity();
    }
    let k = skew(v);
    Matrix3::identity() + k * (angle.sin() / angle) + k * k * ((1.0 - angle.cos()) / (angle * angle))
}

/// `R_i = exp([w_i]x (t_i - t_{i-1})) R_{i-1}` from `R_0 = I`.
///
/// The first sample only fixes the start time; each later sample's rate is
/// held over the interval ending at its timestamp.
pub fn integrate(samples: &[GyroSample]) -> Result<RotationEstimate> {
    let mut r = Matrix3::identity();
    for (i, pair) in samples.windows(2).enumerate() {
        let dt = pair[1].timestamp - pair[0].timestamp;
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!(
                "gyro timestamps not strictly increasing at sample {} ({} -> {})",
                i + 1,
                pair[0].timestamp,
                pair[1].timestamp
            )));
        }
        r = rodrigues_exp(&(pair[1].omega * dt)) * r;
        if (i + 1) % REORTHONORMALIZE_EVERY == 0 {
            r = nearest_rotation(&r);
        }
    }
    if samples.len() > 1 {
        r = nearest_rotation(&r);
    }
    Ok(RotationEstimate::from_rotation(r))
}

/// Samples with `t_start <= timestamp <= t_end`.
pub fn window(samples: &[GyroSample], t_start: f64, t_end: f64) -> Vec<GyroSample> {
    samples
        .iter()
        .filter(|s| s.timestamp >= t_start && s.timestamp <= t_end)
        .copied()
        .collect()
}

/// Constant rate `omega` sampled at `rate_hz` over `[0, duration]`.
pub fn constant_rate_samples(omega: Vector3<f64>, duration: f64, rate_hz: f64) -> Vec<GyroSample> {
    let n = (duration * rate_hz).round() as usize;
    (0..=n)
        .map(|i| GyroSample {
            timestamp: duration * i as f64 / n as f64,
            omega,
        })
        .collect()
}
