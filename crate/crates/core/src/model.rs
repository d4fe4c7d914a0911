//! Single-file model artifact: network, scaler, calibration, class names
//! and the configuration that produced them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::features::feature_order_hash;
use crate::ood::{OodError, Scorer};
use crate::protonet::{Network, StandardScaler};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model file is not valid: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("feature order {found} does not match the model ({expected})")]
    FeatureOrderMismatch { expected: String, found: String },
    #[error("input has {found} features, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Ood(#[from] OodError),
}

/// Per-window output of [`Model::score`].
#[derive(Debug, Clone, PartialEq)]
pub struct WindowScore {
    pub class: usize,
    pub confidence: f64,
    pub probabilities: Vec<f64>,
    pub ood_score: f64,
    pub chi2_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub format_version: u32,
    pub feature_order_hash: String,
    pub config: RunConfig,
    pub class_names: Vec<String>,
    pub scaler: StandardScaler,
    pub network: Network,
    pub calibration: Option<Scorer>,
}

impl Model {
    pub fn new(
        config: RunConfig,
        class_names: Vec<String>,
        scaler: StandardScaler,
        network: Network,
        calibration: Option<Scorer>,
    ) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            feature_order_hash: feature_order_hash(),
            config,
            class_names,
            scaler,
            network,
            calibration,
        }
    }

    /// Refuses inputs produced under a different feature order.
    pub fn check_feature_order(&self, found: &str) -> Result<(), ModelError> {
        if found != self.feature_order_hash {
            return Err(ModelError::FeatureOrderMismatch {
                expected: self.feature_order_hash.clone(),
                found: found.to_string(),
            });
        }
        Ok(())
    }

    pub fn scorer(&self) -> Result<&Scorer, ModelError> {
        self.calibration
            .as_ref()
            .ok_or(ModelError::Ood(OodError::NotCalibrated))
    }

    pub fn embed(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        if features.len() != self.scaler.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.scaler.dim(),
                found: features.len(),
            });
        }
        Ok(self.network.embed(&self.scaler.transform(features)))
    }

    pub fn score(&self, features: &[f64]) -> Result<WindowScore, ModelError> {
        let scorer = self.scorer()?;
        let z = self.embed(features)?;
        let prediction = scorer.predict(&z);
        Ok(WindowScore {
            ood_score: scorer.ood_score_for(&z, prediction.class),
            chi2_score: scorer.chi2_score(&z),
            class: prediction.class,
            confidence: prediction.confidence,
            probabilities: prediction.probabilities,
        })
    }

    /// Scores rows in parallel, preserving order.
    pub fn score_all<R: AsRef<[f64]> + Sync>(
        &self,
        rows: &[R],
    ) -> Result<Vec<WindowScore>, ModelError> {
        use rayon::prelude::*;
        rows.par_iter().map(|r| self.score(r.as_ref())).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let model: Self = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Version(model.format_version));
        }
        model.check_feature_order(&feature_order_hash())?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
