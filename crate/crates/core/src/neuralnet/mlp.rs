use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::NetError;

/// Probabilities are clipped to `[PROB_EPS, 1 - PROB_EPS]` inside the loss.
pub const PROB_EPS: f64 = 1e-7;

/// Fully connected layer; `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Per-layer pre-activations and activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `pre[l]` is `n x out_l`.
    pub pre: Vec<Array2<f64>>,
    /// `post[0]` is the input; `post[l + 1]` is the output of layer `l`.
    pub post: Vec<Array2<f64>>,
}

impl ForwardCache {
    /// Raw (unclipped) sigmoid outputs.
    pub fn probabilities(&self) -> Array1<f64> {
        self.post.last().expect("non-empty cache").column(0).to_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Gradients {
            weights: mlp.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: mlp.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of one prediction.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub fn mean_bce(probabilities: &[f64], labels: &[f64]) -> f64 {
    debug_assert_eq!(probabilities.len(), labels.len());
    let sum: f64 = probabilities.iter().zip(labels).map(|(&p, &y)| bce(p, y)).sum();
    sum / probabilities.len() as f64
}

impl Mlp {
    /// He-uniform hidden layers and Xavier-uniform output layer, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = if l == last {
                    (6.0 / (fan_in + fan_out) as f64).sqrt()
                } else {
                    (6.0 / fan_in as f64).sqrt()
                };
                let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..=limit));
                DenseLayer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Mlp {
            layers: dims
                .windows(2)
                .map(|w| DenseLayer {
                    weights: Array2::zeros((w[1], w[0])),
                    bias: Array1::zeros(w[1]),
                })
                .collect(),
        }
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::InvalidCheckpoint("no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NetError::DimensionMismatch {
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(NetError::DimensionMismatch {
                    expected: l.out_dim(),
                    got: l.bias.len(),
                });
            }
        }
        let out = layers.last().map(DenseLayer::out_dim).unwrap_or(0);
        if out != 1 {
            return Err(NetError::InvalidCheckpoint(format!("output width must be 1, got {out}")));
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Input width followed by every layer's output width.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::out_dim))
            .collect()
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache, NetError> {
        if x.ncols() != self.input_dim() {
            return Err(NetError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len() + 1);
        post.push(x.to_owned());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = post[l].dot(&layer.weights.t());
            z += &layer.bias;
            let a = if l == last {
                z.mapv(sigmoid)
            } else {
                z.mapv(|v| v.max(0.0))
            };
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardCache { pre, post })
    }

    /// Probabilities for each row, clipped to the open unit interval.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>, NetError> {
        Ok(self
            .forward_batch(x)?
            .probabilities()
            .mapv(|p| p.clamp(PROB_EPS, 1.0 - PROB_EPS)))
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, NetError> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        Ok(self.predict_proba(view)?[0])
    }

    /// Mean BCE over a batch.
    pub fn loss(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<f64, NetError> {
        let p = self.forward_batch(x)?.probabilities();
        Ok(mean_bce(p.as_slice().expect("contiguous"), y))
    }

    /// Gradients of the mean BCE over the batch, plus that loss.
    pub fn backward(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<(Gradients, f64), NetError> {
        if x.nrows() == 0 {
            return Err(NetError::EmptyDataset("backward on an empty batch"));
        }
        if y.len() != x.nrows() {
            return Err(NetError::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        let cache = self.forward_batch(x)?;
        let n = x.nrows() as f64;
        let probs = cache.probabilities();
        let loss = mean_bce(probs.as_slice().expect("contiguous"), y);

        let mut delta = Array2::from_shape_fn((x.nrows(), 1), |(i, _)| (probs[i] - y[i]) / n);
        let mut grads = Gradients::zeros_like(self);
        for l in (0..self.layers.len()).rev() {
            grads.weights[l] = delta.t().dot(&cache.post[l]);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.layers[l].weights);
                ndarray::Zip::from(&mut upstream)
                    .and(&cache.pre[l - 1])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = upstream;
            }
        }
        Ok((grads, loss))
    }
}
