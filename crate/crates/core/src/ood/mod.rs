//! Calibration and out-of-distribution scoring.
//!
//! Relative Mahalanobis distances in embedding space are turned into
//! p-values through per-class kernel density estimates fitted on held-out
//! in-distribution data. A χ² score on the plain Mahalanobis distance is
//! provided as a baseline.

mod calibrate;
mod kde;
mod mahalanobis;

use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

pub use calibrate::{
    calibrate, covariance_set, embed_all, CalibrationArtifacts, CalibrationConfig, CovarianceSet,
    Prediction, Scorer,
};
pub use kde::{
    kde_tail_p, normal_reference_bandwidth, normal_sf, silverman_bandwidth, BandwidthRule, Kde,
    MIN_BANDWIDTH,
};
pub use mahalanobis::{mahalanobis, MahalanobisMetric, RCOND};

/// Default score above which a window is reported as out of distribution.
pub const DEFAULT_OOD_THRESHOLD: f64 = 0.95;

#[derive(Debug, Error, PartialEq)]
pub enum OodError {
    #[error("covariance is {rows}x{cols}, expected a square matrix")]
    NotSquare { rows: usize, cols: usize },
    #[error("covariance is not symmetric at ({row}, {col}); difference {gap:e}")]
    NonSymmetric { row: usize, col: usize, gap: f64 },
    #[error("class {0} has no support embeddings")]
    EmptyClass(usize),
    #[error("class {0} has no calibration examples")]
    ClassMissingInCalibration(usize),
    #[error("class {class} has {count} calibration example(s); at least 2 are required")]
    TooFewCalibrationPoints { class: usize, count: usize },
    #[error("non-finite relative Mahalanobis distance during calibration")]
    NonFiniteDistance,
    #[error("model has not been calibrated")]
    NotCalibrated,
}

/// Upper tail of the χ² distribution with `dof` degrees of freedom.
pub fn chi2_survival(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(dof as f64)
        .expect("positive degrees of freedom")
        .sf(x)
}

/// Baseline score `1 − P(χ²_dof > d²)`.
pub fn chi2_score(squared_distance: f64, dof: usize) -> f64 {
    1.0 - chi2_survival(squared_distance, dof)
}
