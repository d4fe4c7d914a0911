//! Fully connected ReLU embedding network with hand-written backprop.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One affine layer. `weights` is `in × out` so a row-major batch maps as
/// `X · W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: DMatrix::zeros(fan_in, fan_out),
            bias: DVector::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

/// Forward-pass mode. Training mode draws inverted-dropout masks from the
/// supplied generator.
pub enum Mode<'a, R: Rng> {
    Train(&'a mut R),
    Eval,
}

/// Embedding network: every layer is affine followed by ReLU; the last
/// layer's activations are the embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Dense>,
    dropout_rate: f64,
}

/// Activations kept from a training forward pass.
pub struct ForwardCache {
    /// Input to each layer, after any dropout.
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
    /// Scaled keep-masks for layer inputs that had dropout applied.
    masks: Vec<Option<DMatrix<f64>>>,
}

impl Network {
    /// He-uniform weights, zero biases.
    pub fn new<R: Rng>(dims: &[usize], dropout_rate: f64, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "network needs at least one layer");
        let layers = dims
            .windows(2)
            .map(|d| {
                let limit = (6.0 / d[0] as f64).sqrt();
                let mut layer = Dense::zeros(d[0], d[1]);
                for w in layer.weights.iter_mut() {
                    *w = rng.random_range(-limit..limit);
                }
                layer
            })
            .collect();
        Self {
            layers,
            dropout_rate,
        }
    }

    pub fn from_layers(layers: Vec<Dense>, dropout_rate: f64) -> Self {
        Self {
            layers,
            dropout_rate,
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Dense::fan_out));
        d
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Dropout sits on the connections from hidden layer 2 to 3 and 3 to 4,
    /// i.e. on the inputs of layers with index 2 and 3.
    fn has_dropout(&self, layer: usize) -> bool {
        self.dropout_rate > 0.0 && (2..=3).contains(&layer)
    }

    /// Embeds a batch (one example per row).
    pub fn forward<R: Rng>(&self, x: &DMatrix<f64>, mode: Mode<'_, R>) -> DMatrix<f64> {
        match mode {
            Mode::Eval => {
                let mut h = x.clone();
                for layer in &self.layers {
                    h = affine_relu(&h, layer);
                }
                h
            }
            Mode::Train(rng) => self.forward_train(x, Some(rng)).0,
        }
    }

    /// Eval-mode embedding of one example.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let m = DMatrix::from_row_slice(1, x.len(), x);
        let out = self.forward::<rand_chacha::ChaCha8Rng>(&m, Mode::Eval);
        out.iter().copied().collect()
    }

    /// Embeds many examples given as rows.
    pub fn embed_rows(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if rows.is_empty() {
            return Vec::new();
        }
        let x = rows_to_matrix(rows);
        let out = self.forward::<rand_chacha::ChaCha8Rng>(&x, Mode::Eval);
        (0..out.nrows())
            .map(|r| out.row(r).iter().copied().collect())
            .collect()
    }

    /// Forward pass keeping what backprop needs. With `rng = None` dropout is
    /// skipped.
    pub fn forward_train<R: Rng>(
        &self,
        x: &DMatrix<f64>,
        mut rng: Option<&mut R>,
    ) -> (DMatrix<f64>, ForwardCache) {
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mask = match rng.as_deref_mut() {
                Some(rng) if self.has_dropout(l) => {
                    let keep = 1.0 - self.dropout_rate;
                    let scale = 1.0 / keep;
                    let m = DMatrix::from_fn(h.nrows(), h.ncols(), |_, _| {
                        if rng.random::<f64>() < keep {
                            scale
                        } else {
                            0.0
                        }
                    });
                    h.component_mul_assign(&m);
                    Some(m)
                }
                _ => None,
            };
            let mut pre = &h * &layer.weights;
            for mut row in pre.row_iter_mut() {
                row += layer.bias.transpose();
            }
            let out = pre.map(|v| v.max(0.0));
            cache.inputs.push(h);
            cache.pre.push(pre);
            cache.masks.push(mask);
            h = out;
        }
        (h, cache)
    }

    /// Gradients of the loss with respect to every parameter, given the
    /// gradient with respect to the embedding batch.
    pub fn backward(&self, cache: &ForwardCache, grad_out: DMatrix<f64>) -> Vec<Dense> {
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut g = grad_out;
        for l in (0..self.layers.len()).rev() {
            let pre = &cache.pre[l];
            g.zip_apply(pre, |gv, p| {
                if p <= 0.0 {
                    *gv = 0.0
                }
            });
            let dw = cache.inputs[l].transpose() * &g;
            let db = DVector::from_iterator(g.ncols(), g.column_iter().map(|c| c.sum()));
            if l > 0 {
                let mut gin = &g * self.layers[l].weights.transpose();
                if let Some(mask) = &cache.masks[l] {
                    gin.component_mul_assign(mask);
                }
                g = gin;
            }
            grads.push(Dense {
                weights: dw,
                bias: db,
            });
        }
        grads.reverse();
        grads
    }
}

fn affine_relu(h: &DMatrix<f64>, layer: &Dense) -> DMatrix<f64> {
    let mut pre = h * &layer.weights;
    for mut row in pre.row_iter_mut() {
        row += layer.bias.transpose();
    }
    pre.apply(|v| *v = v.max(0.0));
    pre
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let ncols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c])
}
