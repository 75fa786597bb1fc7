//! Feed-forward binary classifier: six ReLU hidden layers and a sigmoid
//! output unit, trained with mini-batch Adam on binary cross-entropy.

mod checkpoint;
mod mlp;
mod train;

pub use checkpoint::{LayerParams, ModelCheckpoint, TrainingMetadata, CHECKPOINT_VERSION};
pub use mlp::{bce, mean_bce, DenseLayer, ForwardCache, Gradients, Mlp, PROB_EPS};
pub use train::{train, Adam, EpochRecord, TrainOutcome, write_history_csv};

use serde::{Deserialize, Serialize};

use crate::dataset::ENCODED_DIM;

/// Hidden layer count; with input and output this gives eight layers.
pub const HIDDEN_LAYERS: usize = 6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("schema mismatch: checkpoint expects {expected:?}, features are {got:?}")]
    SchemaMismatch { expected: String, got: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_dim: ENCODED_DIM,
            hidden_dims: vec![256, 128, 64, 32, 16, 8],
            learning_rate: 1e-4,
            batch_size: 256,
            max_epochs: 200,
            early_stop_patience: 10,
            seed: 1,
            threshold: 0.5,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidConfig(m));
        if self.hidden_dims.len() != HIDDEN_LAYERS {
            return bad(format!(
                "exactly {HIDDEN_LAYERS} hidden layers required, got {}",
                self.hidden_dims.len()
            ));
        }
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0,1), got {}", self.threshold));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and max epochs must be positive".into());
        }
        Ok(())
    }

    /// Full dimension chain: input, hidden widths, output width 1.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden_dims);
        dims.push(1);
        dims
    }
}

/// `1` iff `probability >= threshold`.
pub fn decide(probability: f64, threshold: f64) -> u8 {
    u8::from(probability >= threshold)
}
