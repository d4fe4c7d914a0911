//! Episodic training with squared-Euclidean prototype loss and Adam.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Dense, Network};
use super::scaler::StandardScaler;
use super::ProtoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_episodes: usize,
    pub n_query: usize,
    pub s_train: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    /// Input dim followed by each layer's width; the last is the embedding.
    pub layer_dims: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_episodes: 20_000,
            n_query: 512,
            s_train: 5,
            learning_rate: 1e-3,
            dropout_rate: 0.25,
            layer_dims: vec![crate::features::FEATURE_DIM, 64, 64, 64, 64],
            seed: 0,
        }
    }
}

/// Indices into the training pool for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// `support[k]` holds the support examples of class `k`.
    pub support: Vec<Vec<usize>>,
    pub query: Vec<usize>,
}

impl Episode {
    /// Support rows (class-major) followed by query rows.
    fn batch_indices(&self) -> Vec<usize> {
        self.support
            .iter()
            .flatten()
            .chain(&self.query)
            .copied()
            .collect()
    }
}

/// Samples `s_train` supports per class, then `n_query` queries uniformly
/// from everything not used as support.
pub fn sample_episode<R: Rng>(
    rng: &mut R,
    by_class: &[Vec<usize>],
    pool_size: usize,
    s_train: usize,
    n_query: usize,
) -> Episode {
    let mut used = vec![false; pool_size];
    let support: Vec<Vec<usize>> = by_class
        .iter()
        .map(|members| {
            sample(rng, members.len(), s_train)
                .into_iter()
                .map(|i| {
                    used[members[i]] = true;
                    members[i]
                })
                .collect()
        })
        .collect();
    let remaining: Vec<usize> = (0..pool_size).filter(|&i| !used[i]).collect();
    let query = sample(rng, remaining.len(), n_query.min(remaining.len()))
        .into_iter()
        .map(|i| remaining[i])
        .collect();
    Episode { support, query }
}

/// Prototype cross-entropy over the queries and its gradient with respect to
/// every embedding row.
///
/// `z` stacks support rows (`support_sizes[k]` rows for class `k`, in class
/// order) above query rows. Distances are squared Euclidean; the loss is the
/// mean negative log-probability of each query's true class.
pub fn prototype_loss(
    z: &DMatrix<f64>,
    support_sizes: &[usize],
    query_labels: &[usize],
) -> (f64, DMatrix<f64>) {
    let dim = z.ncols();
    let k = support_sizes.len();
    let n_support: usize = support_sizes.iter().sum();
    let q = query_labels.len();
    debug_assert_eq!(z.nrows(), n_support + q);

    let mut protos = DMatrix::<f64>::zeros(k, dim);
    let mut row = 0;
    for (c, &s) in support_sizes.iter().enumerate() {
        for _ in 0..s {
            for j in 0..dim {
                protos[(c, j)] += z[(row, j)];
            }
            row += 1;
        }
        for j in 0..dim {
            protos[(c, j)] /= s as f64;
        }
    }

    let mut grad = DMatrix::<f64>::zeros(z.nrows(), dim);
    let mut proto_grad = DMatrix::<f64>::zeros(k, dim);
    let mut loss = 0.0;
    let mut dist = vec![0.0; k];
    let mut prob = vec![0.0; k];
    for (qi, &label) in query_labels.iter().enumerate() {
        let r = n_support + qi;
        for c in 0..k {
            dist[c] = (0..dim)
                .map(|j| (z[(r, j)] - protos[(c, j)]).powi(2))
                .sum::<f64>();
        }
        let min_d = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let norm: f64 = dist.iter().map(|d| (min_d - d).exp()).sum();
        for c in 0..k {
            prob[c] = (min_d - dist[c]).exp() / norm;
        }
        // -log p_y = d_y - min_d + ln(norm)
        loss += dist[label] - min_d + norm.ln();

        // dL/dd_c = (1[c = y] - p_c) / Q
        for c in 0..k {
            let g = (f64::from(u8::from(c == label)) - prob[c]) / q as f64;
            if g == 0.0 {
                continue;
            }
            for j in 0..dim {
                let diff = z[(r, j)] - protos[(c, j)];
                grad[(r, j)] += 2.0 * g * diff;
                proto_grad[(c, j)] -= 2.0 * g * diff;
            }
        }
    }
    loss /= q as f64;

    let mut row = 0;
    for (c, &s) in support_sizes.iter().enumerate() {
        for _ in 0..s {
            for j in 0..dim {
                grad[(row, j)] = proto_grad[(c, j)] / s as f64;
            }
            row += 1;
        }
    }
    (loss, grad)
}

/// Loss and parameter gradients of one episode. `rng = None` disables
/// dropout.
pub fn episode_gradient<R: Rng>(
    net: &Network,
    features: &[Vec<f64>],
    labels: &[usize],
    episode: &Episode,
    rng: Option<&mut R>,
) -> (f64, Vec<Dense>) {
    let idx = episode.batch_indices();
    let dim = features[0].len();
    let x = DMatrix::from_fn(idx.len(), dim, |r, c| features[idx[r]][c]);
    let (z, cache) = net.forward_train(&x, rng);
    let sizes: Vec<usize> = episode.support.iter().map(Vec::len).collect();
    let query_labels: Vec<usize> = episode.query.iter().map(|&i| labels[i]).collect();
    let (loss, dz) = prototype_loss(&z, &sizes, &query_labels);
    (loss, net.backward(&cache, dz))
}

/// Episode loss without gradients (no dropout).
pub fn episode_loss(
    net: &Network,
    features: &[Vec<f64>],
    labels: &[usize],
    episode: &Episode,
) -> f64 {
    episode_gradient::<ChaCha8Rng>(net, features, labels, episode, None).0
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, net: &mut Network, grads: &[Dense]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let mut offset = 0;
        for (layer, g) in net.layers_mut().iter_mut().zip(grads) {
            let pairs = [
                (layer.weights.as_mut_slice(), g.weights.as_slice()),
                (layer.bias.as_mut_slice(), g.bias.as_slice()),
            ];
            for (params, grad) in pairs {
                for (i, (p, &gi)) in params.iter_mut().zip(grad).enumerate() {
                    let m = &mut self.m[offset + i];
                    let v = &mut self.v[offset + i];
                    *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
                offset += grad.len();
            }
        }
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct Trained {
    pub network: Network,
    pub scaler: StandardScaler,
    /// Loss of every episode, in order.
    pub losses: Vec<f64>,
}

/// Fits the scaler, then runs episodic training. Fully determined by
/// `config.seed`.
pub fn train(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    config: &TrainConfig,
) -> Result<Trained, ProtoError> {
    if num_classes < 2 {
        return Err(ProtoError::TooFewClasses(num_classes));
    }
    if features.len() != labels.len() {
        return Err(ProtoError::LengthMismatch {
            features: features.len(),
            labels: labels.len(),
        });
    }
    if config.n_episodes == 0 || config.n_query == 0 || config.s_train == 0 {
        return Err(ProtoError::BadConfig(
            "episode, query and support counts must be at least 1",
        ));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class
            .get_mut(y)
            .ok_or(ProtoError::LabelOutOfRange {
                label: y,
                num_classes,
            })?
            .push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < config.s_train + 1 {
            return Err(ProtoError::ClassTooSmall {
                class,
                size: members.len(),
                required: config.s_train + 1,
            });
        }
    }
    if config.layer_dims.first() != features.first().map(Vec::len).as_ref() {
        return Err(ProtoError::BadConfig(
            "first layer width must equal the feature dimension",
        ));
    }

    let scaler = StandardScaler::fit(features);
    let scaled: Vec<Vec<f64>> = features.iter().map(|f| scaler.transform(f)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut network = Network::new(&config.layer_dims, config.dropout_rate, &mut rng);
    let mut adam = Adam::new(config.learning_rate, network.parameter_count());
    let mut losses = Vec::with_capacity(config.n_episodes);

    for ep in 0..config.n_episodes {
        let episode = sample_episode(
            &mut rng,
            &by_class,
            scaled.len(),
            config.s_train,
            config.n_query,
        );
        let (loss, grads) = episode_gradient(&network, &scaled, labels, &episode, Some(&mut rng));
        if !loss.is_finite() {
            return Err(ProtoError::NonFiniteLoss { episode: ep });
        }
        adam.step(&mut network, &grads);
        losses.push(loss);
        if (ep + 1) % 100 == 0 {
            log::info!(
                "episode {:>6}/{}: loss {loss:.5}",
                ep + 1,
                config.n_episodes
            );
        }
    }

    Ok(Trained {
        network,
        scaler,
        losses,
    })
}
