use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kde::{BandwidthRule, Kde};
use super::mahalanobis::MahalanobisMetric;
use super::{chi2_survival, OodError};
use crate::protonet::{argmax, class_probabilities, Network, StandardScaler};

/// Class means and covariances of a set of embeddings grouped by class.
///
/// `pooled` is the within-class scatter and `total` the scatter about the
/// global mean, both divided by the total number of embeddings; `per_class`
/// divides each class's scatter by its own count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSet {
    pub class_means: Vec<Vec<f64>>,
    pub global_mean: Vec<f64>,
    pub pooled: DMatrix<f64>,
    pub total: DMatrix<f64>,
    pub per_class: Vec<DMatrix<f64>>,
}

fn add_outer(acc: &mut DMatrix<f64>, x: &[f64], mean: &[f64]) {
    let d: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    for i in 0..d.len() {
        for j in 0..d.len() {
            acc[(i, j)] += d[i] * d[j];
        }
    }
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    let mut n = 0usize;
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
        n += 1;
    }
    m.iter_mut().for_each(|a| *a /= n as f64);
    m
}

pub fn covariance_set(grouped: &[Vec<Vec<f64>>]) -> Result<CovarianceSet, OodError> {
    for (k, g) in grouped.iter().enumerate() {
        if g.is_empty() {
            return Err(OodError::EmptyClass(k));
        }
    }
    let dim = grouped[0][0].len();
    let total_n: usize = grouped.iter().map(Vec::len).sum();
    let class_means: Vec<Vec<f64>> = grouped.iter().map(|g| mean_of(g.iter(), dim)).collect();
    let global_mean = mean_of(grouped.iter().flatten(), dim);

    let mut pooled = DMatrix::zeros(dim, dim);
    let mut total = DMatrix::zeros(dim, dim);
    let mut per_class = Vec::with_capacity(grouped.len());
    for (g, mu) in grouped.iter().zip(&class_means) {
        let mut scatter = DMatrix::zeros(dim, dim);
        for z in g {
            add_outer(&mut scatter, z, mu);
            add_outer(&mut total, z, &global_mean);
        }
        pooled += &scatter;
        per_class.push(scatter / g.len() as f64);
    }
    Ok(CovarianceSet {
        class_means,
        global_mean,
        pooled: pooled / total_n as f64,
        total: total / total_n as f64,
        per_class,
    })
}

/// Everything fitted during calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifacts {
    pub covariances: CovarianceSet,
    /// One density over relative Mahalanobis distances per class.
    pub kdes: Vec<Kde>,
    pub s_cal: usize,
    /// Support examples actually drawn per class.
    pub support_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Cap on support examples per class drawn from the training data.
    pub s_cal: usize,
    pub bandwidth: BandwidthRule,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            s_cal: 100,
            bandwidth: BandwidthRule::default(),
            seed: 0,
        }
    }
}

/// Embeds raw feature rows through the scaler and the network (eval mode).
pub fn embed_all<R: AsRef<[f64]>>(
    network: &Network,
    scaler: &StandardScaler,
    rows: &[R],
) -> Vec<Vec<f64>> {
    let scaled: Vec<Vec<f64>> = rows.iter().map(|r| scaler.transform(r.as_ref())).collect();
    network.embed_rows(&scaled)
}

/// Fits means, covariances and per-class KDEs.
///
/// Supports are up to `s_cal` training examples per class. Each
/// calibration example contributes its relative Mahalanobis distance under
/// its own class.
#[allow(clippy::too_many_arguments)]
pub fn calibrate<R: AsRef<[f64]>>(
    network: &Network,
    scaler: &StandardScaler,
    train_rows: &[R],
    train_labels: &[usize],
    cal_rows: &[R],
    cal_labels: &[usize],
    num_classes: usize,
    config: &CalibrationConfig,
) -> Result<CalibrationArtifacts, OodError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut support = vec![Vec::new(); num_classes];
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &y) in train_labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for (k, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            return Err(OodError::EmptyClass(k));
        }
        let take = config.s_cal.min(members.len());
        let mut picked: Vec<usize> = sample(&mut rng, members.len(), take)
            .into_iter()
            .map(|i| members[i])
            .collect();
        picked.sort_unstable();
        let rows: Vec<&[f64]> = picked.iter().map(|&i| train_rows[i].as_ref()).collect();
        support[k] = embed_all(network, scaler, &rows);
    }
    let covariances = covariance_set(&support)?;
    let pooled = MahalanobisMetric::new(&covariances.pooled)?;
    let total = MahalanobisMetric::new(&covariances.total)?;

    let cal_embed = embed_all(network, scaler, cal_rows);
    let mut distances = vec![Vec::new(); num_classes];
    for (z, &y) in cal_embed.iter().zip(cal_labels) {
        let r = pooled.distance(z, &covariances.class_means[y])
            - total.distance(z, &covariances.global_mean);
        if !r.is_finite() {
            return Err(OodError::NonFiniteDistance);
        }
        distances[y].push(r);
    }
    let mut kdes = Vec::with_capacity(num_classes);
    for (k, d) in distances.into_iter().enumerate() {
        match d.len() {
            0 => return Err(OodError::ClassMissingInCalibration(k)),
            1 => return Err(OodError::TooFewCalibrationPoints { class: k, count: 1 }),
            _ => {}
        }
        let kde = Kde::fit(d, config.bandwidth);
        if kde.is_degenerate() {
            log::warn!("class {k}: all calibration distances identical; bandwidth floored");
        }
        kdes.push(kde);
    }

    Ok(CalibrationArtifacts {
        covariances,
        kdes,
        s_cal: config.s_cal,
        support_sizes: support.iter().map(Vec::len).collect(),
    })
}

/// Class decision for one embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub confidence: f64,
    pub probabilities: Vec<f64>,
}

/// Calibration artifacts with their metrics precomputed.
#[derive(Debug, Clone)]
pub struct Scorer {
    artifacts: CalibrationArtifacts,
    pooled: MahalanobisMetric,
    total: MahalanobisMetric,
    class_diag: Vec<MahalanobisMetric>,
}

impl Scorer {
    pub fn new(artifacts: CalibrationArtifacts) -> Result<Self, OodError> {
        let cov = &artifacts.covariances;
        let pooled = MahalanobisMetric::new(&cov.pooled)?;
        let total = MahalanobisMetric::new(&cov.total)?;
        let class_diag = cov
            .per_class
            .iter()
            .map(|c| MahalanobisMetric::diagonal(c.diagonal().as_slice()))
            .collect();
        Ok(Self {
            artifacts,
            pooled,
            total,
            class_diag,
        })
    }

    pub fn artifacts(&self) -> &CalibrationArtifacts {
        &self.artifacts
    }

    pub fn num_classes(&self) -> usize {
        self.class_diag.len()
    }

    /// Distance to each class under that class's diagonal covariance.
    pub fn class_distances(&self, z: &[f64]) -> Vec<f64> {
        self.class_diag
            .iter()
            .zip(&self.artifacts.covariances.class_means)
            .map(|(m, mu)| m.distance(z, mu))
            .collect()
    }

    pub fn predict(&self, z: &[f64]) -> Prediction {
        let probabilities = class_probabilities(&self.class_distances(z));
        let class = argmax(&probabilities);
        Prediction {
            class,
            confidence: probabilities[class],
            probabilities,
        }
    }

    /// `M(z; μ_k, Σ) − M(z; μ_0, Σ_0)`.
    pub fn relative_mahalanobis(&self, z: &[f64], class: usize) -> f64 {
        let cov = &self.artifacts.covariances;
        self.pooled.distance(z, &cov.class_means[class]) - self.total.distance(z, &cov.global_mean)
    }

    /// One minus the KDE tail probability of the relative distance under
    /// the predicted class.
    pub fn ood_score(&self, z: &[f64]) -> f64 {
        self.ood_score_for(z, self.predict(z).class)
    }

    pub fn ood_score_for(&self, z: &[f64], class: usize) -> f64 {
        let r = self.relative_mahalanobis(z, class);
        1.0 - self.artifacts.kdes[class].tail_p(r)
    }

    /// One minus the χ² survival of the squared pooled-covariance distance to
    /// the predicted class, with one degree of freedom per embedding
    /// dimension.
    pub fn chi2_score(&self, z: &[f64]) -> f64 {
        let class = self.predict(z).class;
        let d2 = self
            .pooled
            .squared(z, &self.artifacts.covariances.class_means[class]);
        1.0 - chi2_survival(d2, z.len())
    }
}

impl Serialize for Scorer {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.artifacts.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Scorer {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let artifacts = CalibrationArtifacts::deserialize(d)?;
        Scorer::new(artifacts).map_err(serde::de::Error::custom)
    }
}
