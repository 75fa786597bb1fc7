use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{encoded_column_names, EncodedExample, NormStats, PatternVocab, ENCODED_DIM};
use crate::features::FEATURE_SCHEMA_VERSION;

/// Metadata written next to an encoded CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub schema_version: String,
    pub encoded_dim: usize,
    pub norm_stats: NormStats,
    pub vocab: PatternVocab,
}

impl DatasetSidecar {
    pub fn new(norm_stats: NormStats, vocab: PatternVocab) -> Self {
        DatasetSidecar {
            schema_version: FEATURE_SCHEMA_VERSION.to_string(),
            encoded_dim: ENCODED_DIM,
            norm_stats,
            vocab,
        }
    }
}

/// CSV with a header naming every dimension, preceded by the key columns.
pub fn write_encoded_csv<W: Write>(
    w: W,
    examples: &[EncodedExample],
    vocab: &PatternVocab,
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["doc_id".to_string(), "token_index".to_string(), "label".to_string()];
    header.extend(encoded_column_names(vocab));
    out.write_record(&header)?;
    for ex in examples {
        let mut rec = vec![ex.doc_id.clone(), ex.token_index.to_string(), ex.label.to_string()];
        rec.extend(ex.features.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_dataset_sidecar<W: Write>(w: W, sidecar: &DatasetSidecar) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(w, sidecar)
}
