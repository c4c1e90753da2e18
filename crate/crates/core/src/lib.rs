//! Non-iterative self-calibration of a pinhole camera with Euclidean image
//! plane (zero skew, unit aspect ratio) from `N >= 7` point matches in two
//! views and the known relative rotation angle.
//!
//! The unknowns are the principal point `(a, b)` and `p = f^2`. Ten quartic
//! constraints on the dual image of the absolute conic are reduced through a
//! fixed elimination template to a 6x6 action matrix whose eigenvectors carry
//! the solutions.
//!
//! Module map:
//!
//! - [`poly`]: symbolic expansion of the constraints into a coefficient matrix.
//! - [`twoview`]: point normalization and fundamental matrix estimation.
//! - [`gbsolver`]: elimination template, action matrix and solution read-out.
//! - [`pose`]: essential matrix residuals and decomposition into `(R, t)`.
//! - [`gyro`]: rotation angle from gyroscope rates.
//! - [`pipeline`]: the end-to-end per-pair calibration with filters.
//! - [`synth`]: synthetic scenes, noise models and experiment drivers.
//! - [`formats`]: matches files, gyro CSV, ground truth and report JSON.

// `!(x > y)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod formats;
pub mod geometry;
pub mod gbsolver;
pub mod gyro;
pub mod pipeline;
pub mod poly;
pub mod pose;
pub mod real;
pub mod roots;
pub mod synth;
pub mod twoview;

pub use error::{Error, Result};
pub use gbsolver::{self_calibrate, CalibrationSolution};
pub use twoview::{Correspondence, FundamentalMatrix};
pub use pipeline::{calibrate_pair, CalibrationReport, PairOptions, PairReport, PairStatus};
