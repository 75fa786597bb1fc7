//! Numeric encoding, normalization, document splits and label persistence.

mod encode;
mod labels;
mod normalize;
mod split;

pub use encode::{
    build_vocab, encode, encode_rows, encoded_column_names, EncodedExample, PatternVocab,
    ENCODED_DIM, NUMERIC_COLUMNS, VOCAB_SIZE,
};
pub use labels::{
    export_effective_labels, read_label_jsonl, write_label_records, LabelKey, LabelLog, LabelRecord, LabelSource,
    LabelStore,
};
pub use normalize::{apply_normalizer, fit_normalizer, NormStats};
pub use split::{split, DatasetSplit, SplitSpec};

pub use self::io::{write_dataset_sidecar, write_encoded_csv, DatasetSidecar};

mod io;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("cannot fit normalization on an empty training set")]
    EmptyTrainingSet,
    #[error("need at least {needed} documents to split, got {got}")]
    TooFewDocuments { needed: usize, got: usize },
    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),
    #[error("unknown token {doc_id}#{token_index}")]
    UnknownToken { doc_id: String, token_index: usize },
    #[error("no label recorded for {doc_id}#{token_index}")]
    NotFound { doc_id: String, token_index: usize },
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(i64),
    #[error("label file line {line}: {message}")]
    BadLabelRecord { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
