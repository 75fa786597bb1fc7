use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{DenseLayer, Mlp};
use super::{NetError, NetworkConfig, HIDDEN_LAYERS};
use crate::dataset::{NormStats, PatternVocab};
use crate::features::FEATURE_SCHEMA_VERSION;

pub const CHECKPOINT_VERSION: &str = "tabext-checkpoint/1";

/// Row-major `out x in` weights and the bias vector of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_validation_f1: f64,
    pub config: NetworkConfig,
}

/// Everything needed for inference on new documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub version: String,
    pub schema_version: String,
    /// Input width, six hidden widths, output width 1.
    pub layer_dims: Vec<usize>,
    pub layers: Vec<LayerParams>,
    pub norm_stats: NormStats,
    pub vocab: PatternVocab,
    pub threshold: f64,
    pub metadata: TrainingMetadata,
}

impl ModelCheckpoint {
    pub fn new(model: &Mlp, norm_stats: NormStats, vocab: PatternVocab, threshold: f64, metadata: TrainingMetadata) -> Self {
        ModelCheckpoint {
            version: CHECKPOINT_VERSION.to_string(),
            schema_version: FEATURE_SCHEMA_VERSION.to_string(),
            layer_dims: model.dims(),
            layers: model
                .layers()
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            norm_stats,
            vocab,
            threshold,
            metadata,
        }
    }

    /// Rebuild the network, checking version and the dimension chain.
    pub fn to_mlp(&self) -> Result<Mlp, NetError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(NetError::InvalidCheckpoint(format!(
                "unsupported checkpoint version {:?}",
                self.version
            )));
        }
        let dims = &self.layer_dims;
        if dims.len() != HIDDEN_LAYERS + 2 || dims.last() != Some(&1) {
            return Err(NetError::InvalidCheckpoint(format!(
                "dimension chain {dims:?} is not input + {HIDDEN_LAYERS} hidden + 1 output"
            )));
        }
        if self.layers.len() != dims.len() - 1 {
            return Err(NetError::InvalidCheckpoint(format!(
                "{} layers for a {}-entry dimension chain",
                self.layers.len(),
                dims.len()
            )));
        }
        if self.norm_stats.dim() != dims[0] || self.norm_stats.max.len() != dims[0] {
            return Err(NetError::InvalidCheckpoint("normalization width differs from input width".into()));
        }
        let layers = self
            .layers
            .iter()
            .zip(dims.windows(2))
            .map(|(p, w)| {
                let weights = Array2::from_shape_vec((w[1], w[0]), p.weights.clone()).map_err(|_| {
                    NetError::InvalidCheckpoint(format!(
                        "layer {}x{} has {} weights",
                        w[1],
                        w[0],
                        p.weights.len()
                    ))
                })?;
                if p.bias.len() != w[1] {
                    return Err(NetError::InvalidCheckpoint(format!(
                        "bias of length {} for width {}",
                        p.bias.len(),
                        w[1]
                    )));
                }
                Ok(DenseLayer {
                    weights,
                    bias: Array1::from(p.bias.clone()),
                })
            })
            .collect::<Result<Vec<_>, NetError>>()?;
        Mlp::from_layers(layers)
    }

    /// Fail unless features were produced under this checkpoint's schema.
    pub fn check_schema(&self, feature_schema: &str) -> Result<(), NetError> {
        if feature_schema != self.schema_version {
            return Err(NetError::SchemaMismatch {
                expected: self.schema_version.clone(),
                got: feature_schema.to_string(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn checkpoint() -> ModelCheckpoint {
        let cfg = NetworkConfig {
            input_dim: 4,
            hidden_dims: vec![3; 6],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = Mlp::new(&cfg.layer_dims(), &mut rng);
        let stats = NormStats { min: vec![0.0; 4], max: vec![1.0; 4] };
        ModelCheckpoint::new(
            &m,
            stats,
            PatternVocab::default(),
            0.5,
            TrainingMetadata { epochs_run: 1, best_epoch: 1, final_validation_f1: 0.5, config: cfg },
        )
    }

    #[test]
    fn json_round_trip_rebuilds_same_network() {
        let ck = checkpoint();
        let json = serde_json::to_string(&ck).unwrap();
        let back: ModelCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ck);
        let m = back.to_mlp().unwrap();
        assert_eq!(m.dims(), [4, 3, 3, 3, 3, 3, 3, 1]);
        assert_eq!(m.dims().len(), 8);
    }

    #[test]
    fn rejects_inconsistent_checkpoints() {
        let mut ck = checkpoint();
        ck.layers[2].weights.pop();
        assert!(ck.to_mlp().is_err());
        let mut ck = checkpoint();
        ck.layer_dims.remove(1);
        assert!(ck.to_mlp().is_err());
        let mut ck = checkpoint();
        ck.version = "tabext-checkpoint/0".into();
        assert!(ck.to_mlp().is_err());
    }

    #[test]
    fn schema_check() {
        let ck = checkpoint();
        assert!(ck.check_schema(FEATURE_SCHEMA_VERSION).is_ok());
        assert!(matches!(ck.check_schema("tabext-features/0"), Err(NetError::SchemaMismatch { .. })));
    }
}
