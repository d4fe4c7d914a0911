//! Run configuration shared by every pipeline stage and embedded in the
//! model file.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureConfig, FEATURE_DIM, NUM_BANDS};
use crate::ood::{BandwidthRule, DEFAULT_OOD_THRESHOLD};
use crate::protonet::TrainConfig;
use crate::windowing::WindowConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{field} must be {requirement}, got {value}")]
    OutOfRange {
        field: &'static str,
        requirement: &'static str,
        value: String,
    },
    #[error("layer widths must start at {FEATURE_DIM} and have at least one layer, got {0:?}")]
    LayerDims(Vec<usize>),
}

/// How windows become feature vectors. Stored with every feature file so
/// training and scoring can refuse mismatched inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ExtractionConfig {
    pub window: WindowConfig,
    pub features: FeatureConfig,
    /// Every payload size is replaced by this before featurization.
    pub mask_sizes: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunPaths {
    pub manifest: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub extraction: ExtractionConfig,
    /// `train.seed` seeds the split, training and calibration sampling.
    pub train: TrainConfig,
    /// Cap on calibration support examples per class.
    pub s_cal: usize,
    pub kde_bandwidth: BandwidthRule,
    /// Share of each class held out for calibration.
    pub calibration_fraction: f64,
    pub ood_threshold: f64,
    pub paths: RunPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            extraction: ExtractionConfig::default(),
            train: TrainConfig::default(),
            s_cal: 100,
            kde_bandwidth: BandwidthRule::default(),
            calibration_fraction: 0.2,
            ood_threshold: DEFAULT_OOD_THRESHOLD,
            paths: RunPaths::default(),
        }
    }
}

fn out_of_range(
    field: &'static str,
    requirement: &'static str,
    value: impl ToString,
) -> ConfigError {
    ConfigError::OutOfRange {
        field,
        requirement,
        value: value.to_string(),
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let idle = self.features.idle_threshold;
        if !(idle.is_finite() && idle > 0.0) {
            return Err(out_of_range("idle_threshold", "positive and finite", idle));
        }
        if self.mask_sizes == Some(0) {
            return Err(out_of_range("mask_sizes", "at least 1", 0));
        }
        // Every wavelet band needs its own level of the transform.
        let bins = self.window.num_bins();
        if bins < 1 << (NUM_BANDS - 1) {
            return Err(out_of_range(
                "window_seconds / bin_seconds",
                "at least 4096 bins (13 wavelet bands)",
                bins,
            ));
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// Checks everything that the stages would otherwise reject late.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.extraction.validate()?;
        let t = &self.train;
        if t.n_episodes == 0 {
            return Err(out_of_range("episodes", "at least 1", 0));
        }
        if t.n_query == 0 {
            return Err(out_of_range("queries", "at least 1", 0));
        }
        if t.s_train == 0 {
            return Err(out_of_range("support", "at least 1", 0));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(out_of_range("lr", "positive and finite", t.learning_rate));
        }
        if !(0.0..1.0).contains(&t.dropout_rate) {
            return Err(out_of_range("dropout_rate", "in [0, 1)", t.dropout_rate));
        }
        if t.layer_dims.len() < 2 || t.layer_dims[0] != FEATURE_DIM || t.layer_dims.contains(&0) {
            return Err(ConfigError::LayerDims(t.layer_dims.clone()));
        }
        if self.s_cal == 0 {
            return Err(out_of_range("s_cal", "at least 1", 0));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(out_of_range(
                "calibration_fraction",
                "in (0, 1)",
                self.calibration_fraction,
            ));
        }
        if !(0.0..=1.0).contains(&self.ood_threshold) {
            return Err(out_of_range(
                "ood_threshold",
                "in [0, 1]",
                self.ood_threshold,
            ));
        }
        Ok(())
    }
}
