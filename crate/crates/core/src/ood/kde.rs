use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

/// Smallest bandwidth a fitted density may have.
pub const MIN_BANDWIDTH: f64 = 1e-6;

/// Standard normal upper tail `1 − Φ(z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Mass of a Gaussian-kernel mixture over `points` lying above `r`:
/// `(1/n) Σ_i (1 − Φ((r − r_i)/h))`.
pub fn kde_tail_p(points: &[f64], bandwidth: f64, r: f64) -> f64 {
    debug_assert!(!points.is_empty() && bandwidth > 0.0);
    let sum: f64 = points
        .iter()
        .map(|&ri| normal_sf((r - ri) / bandwidth))
        .sum();
    (sum / points.len() as f64).clamp(0.0, 1.0)
}

fn sample_std(points: &[f64]) -> f64 {
    let n = points.len() as f64;
    let mean = points.iter().sum::<f64>() / n;
    (points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Normal-reference rule `1.06 · σ̂ · n^(-1/5)` with `σ̂` the sample
/// standard deviation, floored at [`MIN_BANDWIDTH`].
pub fn normal_reference_bandwidth(points: &[f64]) -> f64 {
    if points.len() < 2 {
        return MIN_BANDWIDTH;
    }
    (1.06 * sample_std(points) * (points.len() as f64).powf(-0.2)).max(MIN_BANDWIDTH)
}

/// Silverman's rule of thumb `0.9 · min(σ̂, IQR/1.34) · n^(-1/5)`, falling
/// back to `σ̂` when the IQR is zero; floored at [`MIN_BANDWIDTH`]. Less
/// prone than the normal-reference rule to oversmoothing skewed samples.
pub fn silverman_bandwidth(points: &[f64]) -> f64 {
    if points.len() < 2 {
        return MIN_BANDWIDTH;
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sd = sample_std(&sorted);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    (0.9 * spread * (points.len() as f64).powf(-0.2)).max(MIN_BANDWIDTH)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    #[default]
    Silverman,
    NormalReference,
}

impl BandwidthRule {
    pub fn bandwidth(self, points: &[f64]) -> f64 {
        match self {
            BandwidthRule::Silverman => silverman_bandwidth(points),
            BandwidthRule::NormalReference => normal_reference_bandwidth(points),
        }
    }
}

/// Univariate Gaussian KDE over one class's calibration distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    /// Sorted ascending.
    pub points: Vec<f64>,
    pub bandwidth: f64,
}

impl Kde {
    pub fn fit(mut points: Vec<f64>, rule: BandwidthRule) -> Self {
        points.sort_by(f64::total_cmp);
        let bandwidth = rule.bandwidth(&points);
        Self { points, bandwidth }
    }

    /// True when every point coincides and the bandwidth sits at the floor.
    pub fn is_degenerate(&self) -> bool {
        self.points.first() == self.points.last()
    }

    pub fn tail_p(&self, r: f64) -> f64 {
        kde_tail_p(&self.points, self.bandwidth, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_limits_and_symmetry() {
        assert_eq!(kde_tail_p(&[0.3], 0.2, 0.3), 0.5);
        assert!(kde_tail_p(&[0.0, 1.0], 0.5, -1e6) > 1.0 - 1e-15);
        assert!(kde_tail_p(&[0.0, 1.0], 0.5, 1e6) < 1e-15);
    }

    #[test]
    fn bandwidth_values() {
        let pts = [1.0, 2.0, 3.0, 4.0];
        // sample std of 1..4 is sqrt(5/3)
        let sd = (5.0f64 / 3.0).sqrt();
        let n = 4f64.powf(-0.2);
        assert!((normal_reference_bandwidth(&pts) - 1.06 * sd * n).abs() < 1e-15);
        // IQR = 3.25 - 1.75 = 1.5; 1.5/1.34 < sd
        assert!((silverman_bandwidth(&pts) - 0.9 * (1.5 / 1.34) * n).abs() < 1e-15);
        // IQR zero: falls back to the standard deviation
        let spike = [0.0, 0.0, 0.0, 0.0, 0.0, 10.0];
        let expected = 0.9 * sample_std(&spike) * 6f64.powf(-0.2);
        assert!((silverman_bandwidth(&spike) - expected).abs() < 1e-15);
        for rule in [BandwidthRule::Silverman, BandwidthRule::NormalReference] {
            let flat = Kde::fit(vec![2.0; 5], rule);
            assert_eq!(flat.bandwidth, MIN_BANDWIDTH);
            assert!(flat.is_degenerate());
            assert!(!Kde::fit(vec![2.0, 1.0], rule).is_degenerate());
        }
    }
}
