//! Undecimated (à-trous) Haar transform with periodic boundaries, and the
//! per-band summaries derived from it.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Additive floor inside the log transforms of detail statistics.
pub const LOG_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WaveletError {
    #[error("signal length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("{requested} bands requested but a length-{len} signal supports at most {max}")]
    TooManyBands {
        requested: usize,
        len: usize,
        max: usize,
    },
}

/// Detail coefficients `d[n][k]`, stored band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailMatrix {
    bands: Vec<Vec<f64>>,
}

impl DetailMatrix {
    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }

    /// Signal length `N`.
    pub fn len(&self) -> usize {
        self.bands.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn band(&self, k: usize) -> &[f64] {
        &self.bands[k]
    }

    /// Coefficient at time `n`, band `k`.
    pub fn get(&self, n: usize, k: usize) -> f64 {
        self.bands[k][n]
    }

    pub fn bands(&self) -> impl Iterator<Item = &[f64]> {
        self.bands.iter().map(Vec::as_slice)
    }

    /// Each band's coefficients in ascending order. Band summaries of the
    /// result are bit-identical for any permutation of the time axis, e.g.
    /// a circular shift of the input signal.
    pub fn sorted(&self) -> Self {
        let bands = self
            .bands
            .iter()
            .map(|b| {
                let mut b = b.clone();
                b.sort_unstable_by(f64::total_cmp);
                b
            })
            .collect();
        Self { bands }
    }
}

/// Stationary Haar transform.
///
/// Band `k` applies the level-one Haar pair with taps spaced `2^k` apart to
/// the running approximation, wrapping indices modulo `N`:
///
/// ```text
/// d_k[n]   = (a_k[n] - a_k[n - 2^k]) / √2
/// a_k+1[n] = (a_k[n] + a_k[n - 2^k]) / √2
/// ```
pub fn swt_haar(signal: &[f64], num_bands: usize) -> Result<DetailMatrix, WaveletError> {
    let n = signal.len();
    if !n.is_power_of_two() {
        return Err(WaveletError::NotPowerOfTwo(n));
    }
    let max = n.trailing_zeros() as usize + 1;
    if num_bands > max {
        return Err(WaveletError::TooManyBands {
            requested: num_bands,
            len: n,
            max,
        });
    }

    let mask = n - 1;
    let mut approx = signal.to_vec();
    let mut next = vec![0.0; n];
    let mut bands = Vec::with_capacity(num_bands);
    for k in 0..num_bands {
        let shift = (1usize << k) & mask;
        let mut detail = vec![0.0; n];
        for i in 0..n {
            let cur = approx[i];
            let lag = approx[(i + n - shift) & mask];
            detail[i] = FRAC_1_SQRT_2 * (cur - lag);
            next[i] = FRAC_1_SQRT_2 * (cur + lag);
        }
        std::mem::swap(&mut approx, &mut next);
        bands.push(detail);
    }
    Ok(DetailMatrix { bands })
}

/// Energy `Σ_n d[n][k]²` of each band.
pub fn band_energies(details: &DetailMatrix) -> Vec<f64> {
    details
        .bands()
        .map(|b| b.iter().map(|d| d * d).sum())
        .collect()
}

/// Fraction of total detail energy in each band; all zero when there is no
/// energy at all.
pub fn relative_energy(details: &DetailMatrix) -> Vec<f64> {
    let energies = band_energies(details);
    let total: f64 = energies.iter().sum();
    if total > 0.0 {
        energies.iter().map(|e| e / total).collect()
    } else {
        vec![0.0; energies.len()]
    }
}

/// Shannon entropy (nats) of the per-coefficient energy distribution in each
/// band; zero for an empty band.
pub fn shannon_entropy(details: &DetailMatrix) -> Vec<f64> {
    details
        .bands()
        .map(|band| {
            let energy: f64 = band.iter().map(|d| d * d).sum();
            if energy <= 0.0 {
                return 0.0;
            }
            let s: f64 = band
                .iter()
                .map(|d| d * d / energy)
                .filter(|&p| p > 0.0)
                .map(|p| -p * p.ln())
                .sum();
            s.max(0.0)
        })
        .collect()
}

/// How the per-band spread of detail coefficients is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetailStdMode {
    /// `sqrt(mean((μ_k − d)²))`: signed coefficients about their absolute mean.
    #[default]
    AboutAbsoluteMean,
    /// Conventional standard deviation of `|d|`.
    OfMagnitudes,
}

/// `(ln(μ_k + ε), ln(σ_k + ε))` per band, where `μ_k` is the mean absolute
/// coefficient.
pub fn detail_stats(details: &DetailMatrix, mode: DetailStdMode) -> (Vec<f64>, Vec<f64>) {
    let mut log_mean = Vec::with_capacity(details.num_bands());
    let mut log_std = Vec::with_capacity(details.num_bands());
    for band in details.bands() {
        let n = band.len() as f64;
        let mu = band.iter().map(|d| d.abs()).sum::<f64>() / n;
        let var = match mode {
            DetailStdMode::AboutAbsoluteMean => {
                band.iter().map(|d| (mu - d).powi(2)).sum::<f64>() / n
            }
            DetailStdMode::OfMagnitudes => {
                band.iter().map(|d| (mu - d.abs()).powi(2)).sum::<f64>() / n
            }
        };
        log_mean.push((mu + LOG_EPSILON).ln());
        log_std.push((var.sqrt() + LOG_EPSILON).ln());
    }
    (log_mean, log_std)
}
