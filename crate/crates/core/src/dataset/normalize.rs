use serde::{Deserialize, Serialize};

use super::{DatasetError, EncodedExample};

/// Per-dimension training minima and maxima.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Min-max scale one vector in place; constant dimensions become 0 and
    /// out-of-range values clamp to [0, 1].
    pub fn apply_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.min).zip(&self.max) {
            *v = if hi > lo {
                ((*v - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
}

pub fn fit_normalizer(train: &[EncodedExample]) -> Result<NormStats, DatasetError> {
    let first = train.first().ok_or(DatasetError::EmptyTrainingSet)?;
    let dim = first.features.len();
    let mut min = vec![f64::INFINITY; dim];
    let mut max = vec![f64::NEG_INFINITY; dim];
    for ex in train {
        if ex.features.len() != dim {
            return Err(DatasetError::SchemaMismatch(format!(
                "{}#{} has {} dimensions, expected {dim}",
                ex.doc_id,
                ex.token_index,
                ex.features.len()
            )));
        }
        for (i, &v) in ex.features.iter().enumerate() {
            min[i] = min[i].min(v);
            max[i] = max[i].max(v);
        }
    }
    Ok(NormStats { min, max })
}

pub fn apply_normalizer(x: &[f64], stats: &NormStats) -> Vec<f64> {
    let mut out = x.to_vec();
    stats.apply_in_place(&mut out);
    out
}
