use super::EvalError;

/// Default number of equal-width confidence bins.
pub const DEFAULT_ECE_BINS: usize = 15;

fn check_lengths(a: usize, b: usize) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Micro-averaged F1. For single-label predictions every miss is one false
/// positive and one false negative, so this equals accuracy.
pub fn micro_f1(actual: &[usize], predicted: &[usize]) -> Result<f64, EvalError> {
    check_lengths(actual.len(), predicted.len())?;
    let tp = actual.iter().zip(predicted).filter(|(a, p)| a == p).count() as f64;
    let miss = actual.len() as f64 - tp;
    Ok(2.0 * tp / (2.0 * tp + miss + miss))
}

pub fn accuracy(actual: &[usize], predicted: &[usize]) -> Result<f64, EvalError> {
    check_lengths(actual.len(), predicted.len())?;
    let hits = actual.iter().zip(predicted).filter(|(a, p)| a == p).count();
    Ok(hits as f64 / actual.len() as f64)
}

/// Bin of a confidence among `n_bins` equal-width bins on (0, 1]; zero
/// falls into the first bin.
fn ece_bin(confidence: f64, n_bins: usize) -> usize {
    let b = (confidence * n_bins as f64).ceil() as usize;
    b.saturating_sub(1).min(n_bins - 1)
}

/// Expected calibration error `Σ_b (n_b/N) |acc_b − conf_b|`.
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<f64, EvalError> {
    check_lengths(confidences.len(), correct.len())?;
    if n_bins == 0 {
        return Err(EvalError::ZeroBins);
    }
    if let Some(&c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(EvalError::ConfidenceOutOfRange(c));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut hit_sum = vec![0.0; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ece_bin(c, n_bins);
        count[b] += 1;
        conf_sum[b] += c;
        hit_sum[b] += f64::from(u8::from(ok));
    }
    let n = confidences.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            nb / n * (hit_sum[b] / nb - conf_sum[b] / nb).abs()
        })
        .sum())
}

/// Counts with rows indexed by the actual class and columns by the
/// predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_indices(
        classes: Vec<String>,
        actual: &[usize],
        predicted: &[usize],
    ) -> Result<Self, EvalError> {
        check_lengths(actual.len(), predicted.len())?;
        let k = classes.len();
        let mut counts = vec![vec![0u64; k]; k];
        for (&a, &p) in actual.iter().zip(predicted) {
            if a >= k || p >= k {
                return Err(EvalError::UnknownLabel(a.max(p).to_string()));
            }
            counts[a][p] += 1;
        }
        Ok(Self { classes, counts })
    }

    /// Same as [`Self::from_indices`] but with labels given by name.
    pub fn from_labels(
        classes: &[String],
        actual: &[&str],
        predicted: &[&str],
    ) -> Result<Self, EvalError> {
        let index = |name: &str| {
            classes
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| EvalError::UnknownLabel(name.to_string()))
        };
        let a = actual
            .iter()
            .map(|s| index(s))
            .collect::<Result<Vec<_>, _>>()?;
        let p = predicted
            .iter()
            .map(|s| index(s))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_indices(classes.to_vec(), &a, &p)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Each row divided by its sum; all-zero rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| {
                        if total == 0 {
                            0.0
                        } else {
                            c as f64 / total as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn class_scores(&self) -> Vec<ClassScores> {
        let k = self.num_classes();
        (0..k)
            .map(|c| {
                let tp = self.counts[c][c] as f64;
                let support: u64 = self.counts[c].iter().sum();
                let predicted: u64 = (0..k).map(|r| self.counts[r][c]).sum();
                let precision = if predicted == 0 {
                    0.0
                } else {
                    tp / predicted as f64
                };
                let recall = if support == 0 {
                    0.0
                } else {
                    tp / support as f64
                };
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassScores {
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Fraction of scores strictly above `threshold`.
pub fn fraction_above(scores: &[f64], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s > threshold).count() as f64 / scores.len() as f64
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `samples` and Uniform(0, 1).
pub fn ks_uniform(samples: &[f64]) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = v.clamp(0.0, 1.0);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}
