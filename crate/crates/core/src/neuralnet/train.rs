use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{mean_bce, Gradients, Mlp};
use super::{decide, NetError, NetworkConfig};
use crate::evalmetrics::compute_metrics;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(model: &Mlp, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
        }
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let lr_t = self.learning_rate * (1.0 - b2.powi(self.step)).sqrt() / (1.0 - b1.powi(self.step));
        let eps_hat = eps * (1.0 - b2.powi(self.step)).sqrt();
        for (l, layer) in model.layers_mut().iter_mut().enumerate() {
            update(&mut layer.weights, &grads.weights[l], &mut self.m.weights[l], &mut self.v.weights[l], b1, b2, lr_t, eps_hat);
            update(&mut layer.bias, &grads.biases[l], &mut self.m.biases[l], &mut self.v.biases[l], b1, b2, lr_t, eps_hat);
        }
    }
}

// Equivalent to the textbook form with bias-corrected moments:
// lr * m_hat / (sqrt(v_hat) + eps).
#[allow(clippy::too_many_arguments)]
fn update<D: ndarray::Dimension>(
    param: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    b1: f64,
    b2: f64,
    lr_t: f64,
    eps_hat: f64,
) {
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr_t * *m / (v.sqrt() + eps_hat);
        });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation F1.
    pub model: Mlp,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub epochs_run: usize,
}

fn class1_f1(model: &Mlp, x: ArrayView2<'_, f64>, y: &[u8], threshold: f64) -> Result<(f64, f64), NetError> {
    let p = model.predict_proba(x)?;
    let pred: Vec<u8> = p.iter().map(|&p| decide(p, threshold)).collect();
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let loss = mean_bce(p.as_slice().expect("contiguous"), &yf);
    let report = compute_metrics(&pred, y).map_err(|_| NetError::EmptyDataset("validation set"))?;
    Ok((loss, report.class_1.f1))
}

/// Mini-batch Adam with per-epoch validation and early stopping on
/// validation F1 (class 1). Deterministic for a fixed `config.seed`.
pub fn train(
    train_x: ArrayView2<'_, f64>,
    train_y: &[u8],
    val_x: ArrayView2<'_, f64>,
    val_y: &[u8],
    config: &NetworkConfig,
) -> Result<TrainOutcome, NetError> {
    config.validate()?;
    if train_x.nrows() == 0 {
        return Err(NetError::EmptyDataset("training set"));
    }
    if val_x.nrows() == 0 {
        return Err(NetError::EmptyDataset("validation set"));
    }
    for (x, y) in [(&train_x, train_y), (&val_x, val_y)] {
        if x.ncols() != config.input_dim {
            return Err(NetError::DimensionMismatch {
                expected: config.input_dim,
                got: x.ncols(),
            });
        }
        if x.nrows() != y.len() {
            return Err(NetError::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Mlp::new(&config.layer_dims(), &mut rng);
    let mut adam = Adam::new(&model, config.learning_rate);
    let mut order: Vec<usize> = (0..train_x.nrows()).collect();
    let targets: Array1<f64> = train_y.iter().map(|&v| f64::from(v)).collect();

    let mut best = model.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut history = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let bx: Array2<f64> = train_x.select(Axis(0), batch);
            let by: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let (grads, loss) = model.backward(bx.view(), &by)?;
            if !loss.is_finite() {
                return Err(NetError::DivergedLoss { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            adam.step(&mut model, &grads);
        }
        let train_loss = loss_sum / order.len() as f64;
        let (val_loss, val_f1) = class1_f1(&model, val_x, val_y, config.threshold)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(NetError::DivergedLoss { epoch });
        }
        log::debug!("epoch {epoch}: train_loss {train_loss:.5} val_loss {val_loss:.5} val_f1 {val_f1:.4}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_f1,
        });
        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best,
        epochs_run: history.len(),
        history,
        best_epoch,
        best_val_f1: best_f1,
    })
}

/// `epoch,train_loss,val_loss,val_f1` CSV.
pub fn write_history_csv<W: Write>(w: W, history: &[EpochRecord]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for rec in history {
        out.serialize(rec)?;
    }
    out.flush()?;
    Ok(())
}
