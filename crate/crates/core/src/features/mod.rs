//! The 129-dimensional per-window feature vector: 25 flow statistics
//! followed by 104 wavelet features (forward block, then backward).
//!
//! Within a direction block the wavelet features are grouped by kind
//! (relative energy, entropy, log mean |detail|, log detail spread), each
//! kind listing bands 0 through 12.

mod flowstats;
mod wavelet;

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use flowstats::{active_idle_periods, compute_flow_stats, FlowStats, FLOW_STAT_COUNT};
pub use wavelet::{
    band_energies, detail_stats, relative_energy, shannon_entropy, swt_haar, DetailMatrix,
    DetailStdMode, WaveletError, LOG_EPSILON,
};

use crate::util::short_hash;
use crate::windowing::TimeWindow;

pub const NUM_BANDS: usize = 13;
pub const WAVELET_FEATURE_COUNT: usize = 2 * 4 * NUM_BANDS;
pub const FEATURE_DIM: usize = FLOW_STAT_COUNT + WAVELET_FEATURE_COUNT;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error("feature vector has {0} entries, expected {FEATURE_DIM}")]
    WrongLength(usize),
    #[error("feature {name} is not finite ({value})")]
    NonFinite { name: String, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Gaps longer than this (seconds) separate active periods.
    pub idle_threshold: f64,
    pub detail_std: DetailStdMode,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            idle_threshold: 1.0,
            detail_std: DetailStdMode::default(),
        }
    }
}

/// Validated feature vector in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FeatureError> {
        if values.len() != FEATURE_DIM {
            return Err(FeatureError::WrongLength(values.len()));
        }
        if let Some((i, &v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FeatureError::NonFinite {
                name: feature_names()[i].clone(),
                value: v,
            });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = FeatureError;
    fn try_from(v: Vec<f64>) -> Result<Self, FeatureError> {
        Self::new(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

const WAVELET_KINDS: [&str; 4] = ["rel_energy", "entropy", "log_mean_detail", "log_std_detail"];

/// Canonical feature names, in vector order.
pub fn feature_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        let mut names: Vec<String> = flowstats::FLOW_STAT_NAMES
            .iter()
            .map(|s| s.to_string())
            .collect();
        for dir in ["forward", "backward"] {
            for kind in WAVELET_KINDS {
                for band in 0..NUM_BANDS {
                    names.push(format!("{kind}_{dir}_{band}"));
                }
            }
        }
        names
    })
}

/// Hash of the canonical feature order, carried by feature files and models.
pub fn feature_order_hash() -> String {
    short_hash(&feature_names().join(","))
}

/// Relative energy, entropy, log mean and log spread of every band, in
/// that order. Summaries are taken over sorted coefficients, so they do not
/// depend on where in the window activity happens.
pub fn band_features(details: &DetailMatrix, mode: DetailStdMode) -> Vec<f64> {
    let details = details.sorted();
    let (log_mean, log_std) = detail_stats(&details, mode);
    let mut out = relative_energy(&details);
    out.extend(shannon_entropy(&details));
    out.extend(log_mean);
    out.extend(log_std);
    out
}

/// Wavelet block for one direction: `4 × NUM_BANDS` values.
pub fn wavelet_features(signal: &[f64], mode: DetailStdMode) -> Result<Vec<f64>, WaveletError> {
    Ok(band_features(&swt_haar(signal, NUM_BANDS)?, mode))
}

pub fn build_feature_vector(
    window: &TimeWindow,
    config: &FeatureConfig,
) -> Result<FeatureVector, FeatureError> {
    let mut values = Vec::with_capacity(FEATURE_DIM);
    values.extend(compute_flow_stats(window, config.idle_threshold).to_array());
    values.extend(wavelet_features(&window.forward_signal, config.detail_std)?);
    values.extend(wavelet_features(
        &window.backward_signal,
        config.detail_std,
    )?);
    FeatureVector::new(values)
}

/// Featurizes windows in parallel; output order matches input order.
pub fn extract_features(
    windows: &[TimeWindow],
    config: &FeatureConfig,
) -> Result<Vec<FeatureVector>, FeatureError> {
    windows
        .par_iter()
        .map(|w| build_feature_vector(w, config))
        .collect()
}

/// Replaces every payload size with `masked_size` and recomputes signals.
pub fn mask_packet_sizes(mut windows: Vec<TimeWindow>, masked_size: u32) -> Vec<TimeWindow> {
    for w in &mut windows {
        for ev in &mut w.events {
            ev.payload_size = masked_size;
        }
        let n = w.num_bins();
        w.rebin(n);
    }
    windows
}
