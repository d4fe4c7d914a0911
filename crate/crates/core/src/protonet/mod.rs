//! Prototypical embedding network: forward pass, episodic training and
//! distance-softmax class probabilities.

mod network;
mod scaler;
mod train;

use thiserror::Error;

pub use network::{rows_to_matrix, Dense, ForwardCache, Mode, Network};
pub use scaler::StandardScaler;
pub use train::{
    episode_gradient, episode_loss, prototype_loss, sample_episode, train, Episode, TrainConfig,
    Trained,
};

#[derive(Debug, Error, PartialEq)]
pub enum ProtoError {
    #[error("training needs at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("class {class} has {size} examples; at least {required} are required")]
    ClassTooSmall {
        class: usize,
        size: usize,
        required: usize,
    },
    #[error("class {0} has no embeddings")]
    EmptyClass(usize),
    #[error("non-finite loss at episode {episode}")]
    NonFiniteLoss { episode: usize },
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("invalid training config: {0}")]
    BadConfig(&'static str),
}

/// Mean embedding per class.
pub fn compute_prototypes(grouped: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>, ProtoError> {
    grouped
        .iter()
        .enumerate()
        .map(|(k, members)| {
            let first = members.first().ok_or(ProtoError::EmptyClass(k))?;
            let mut mean = vec![0.0; first.len()];
            for z in members {
                for (m, v) in mean.iter_mut().zip(z) {
                    *m += v;
                }
            }
            let n = members.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            Ok(mean)
        })
        .collect()
}

/// `softmax(-d)` with max-subtraction.
pub fn class_probabilities(distances: &[f64]) -> Vec<f64> {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = distances.iter().map(|d| (min - d).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}
