//! File-level glue between the stages: corpus directories, training runs,
//! checkpoints and prediction overlays.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    apply_normalizer, build_vocab, encode_rows, fit_normalizer, read_label_jsonl, split, write_dataset_sidecar,
    write_encoded_csv, DatasetError, DatasetSidecar, DatasetSplit, EncodedExample, LabelStore, SplitSpec,
};
use crate::evalmetrics::{compute_metrics, render_report, MetricsError, MetricsReport};
use crate::features::{
    apply_labels, featurize_document, read_feature_jsonl, AlignmentTolerance, FeatureFileError, FeatureRow,
    FEATURE_SCHEMA_VERSION,
};
use crate::ingest::{parse_tsv, DocumentModel, IngestError};
use crate::neuralnet::{
    decide, train, write_history_csv, EpochRecord, Mlp, ModelCheckpoint, NetError, NetworkConfig, TrainingMetadata,
};

pub const OVERLAY_SCHEMA: &str = "tabext-overlay/1";
pub const LABELS_FILE: &str = "labels.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("no documents in {0}")]
    NoDocuments(PathBuf),
    #[error("{path}: {source}")]
    Ingest { path: PathBuf, source: IngestError },
    #[error(transparent)]
    Features(#[from] FeatureFileError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

impl PipelineError {
    /// True for problems with the inputs rather than with this program.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, PipelineError::Io { .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> PipelineError + '_ {
    move |source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    }
}

/// `*.tsv` files of a directory in file-name order.
pub fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_document(path: &Path) -> Result<DocumentModel, PipelineError> {
    let doc_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let f = fs::File::open(path).map_err(io_err(path))?;
    parse_tsv(&doc_id, BufReader::new(f)).map_err(|source| PipelineError::Ingest {
        path: path.to_path_buf(),
        source,
    })
}

/// Every TSV document of a corpus directory; doc ids are file stems.
pub fn load_corpus(dir: &Path) -> Result<Vec<DocumentModel>, PipelineError> {
    let files = corpus_files(dir)?;
    if files.is_empty() {
        return Err(PipelineError::NoDocuments(dir.to_path_buf()));
    }
    files.iter().map(|p| load_document(p)).collect()
}

pub fn load_labels(path: &Path) -> Result<LabelStore, PipelineError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    Ok(read_label_jsonl(BufReader::new(f))?)
}

/// `labels.jsonl` next to the documents, if present.
pub fn load_corpus_labels(dir: &Path) -> Result<Option<LabelStore>, PipelineError> {
    let path = dir.join(LABELS_FILE);
    if path.is_file() {
        load_labels(&path).map(Some)
    } else {
        Ok(None)
    }
}

/// Feature rows for every token; labels default to 0 where `labels` has no
/// entry.
pub fn featurize_corpus(
    docs: &[DocumentModel],
    tolerance: AlignmentTolerance,
    labels: Option<&HashMap<(String, usize), u8>>,
) -> Vec<FeatureRow> {
    let mut rows: Vec<FeatureRow> = docs.iter().flat_map(|d| featurize_document(d, tolerance)).collect();
    if let Some(labels) = labels {
        apply_labels(&mut rows, labels);
    }
    rows
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRow>, PipelineError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    Ok(read_feature_jsonl(BufReader::new(f))?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLevel {
    #[default]
    Document,
    Token,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub split: SplitSpec,
    pub split_level: SplitLevel,
    pub network: NetworkConfig,
}

#[derive(Debug, Clone)]
pub struct EncodedSplit {
    pub train: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
    pub validation: Vec<EncodedExample>,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<EpochRecord>,
    pub test_report: MetricsReport,
    pub validation_report: MetricsReport,
    /// Document ids per partition (token keys as `doc#index` at token level).
    pub partition: DatasetSplit<String>,
    pub data: EncodedSplit,
}

fn partition_rows<'a>(
    rows: &'a [FeatureRow],
    settings: &TrainSettings,
) -> Result<(DatasetSplit<String>, [Vec<&'a FeatureRow>; 3]), PipelineError> {
    let key = |r: &FeatureRow| match settings.split_level {
        SplitLevel::Document => r.doc_id.clone(),
        SplitLevel::Token => format!("{}#{}", r.doc_id, r.token_index),
    };
    let keys: Vec<String> = rows.iter().map(key).collect::<BTreeSet<_>>().into_iter().collect();
    let parts = split(&keys, &settings.split)?;
    let mut which: HashMap<&str, usize> = HashMap::new();
    for (i, part) in [&parts.train, &parts.test, &parts.validation].into_iter().enumerate() {
        for k in part {
            which.insert(k.as_str(), i);
        }
    }
    let mut out: [Vec<&FeatureRow>; 3] = Default::default();
    for r in rows {
        out[which[key(r).as_str()]].push(r);
    }
    Ok((parts, out))
}

fn matrix(examples: &[EncodedExample], dim: usize) -> Array2<f64> {
    let mut x = Array2::zeros((examples.len(), dim));
    for (mut row, ex) in x.rows_mut().into_iter().zip(examples) {
        row.assign(&ndarray::ArrayView1::from(&ex.features[..]));
    }
    x
}

fn labels_of(examples: &[EncodedExample]) -> Vec<u8> {
    examples.iter().map(|e| e.label).collect()
}

/// Split, encode, normalize, train and score on the held-out partitions.
pub fn train_from_rows(rows: &[FeatureRow], settings: &TrainSettings) -> Result<TrainRun, PipelineError> {
    let (partition, [train_rows, test_rows, val_rows]) = partition_rows(rows, settings)?;
    for (name, part) in [("training", &train_rows), ("test", &test_rows), ("validation", &val_rows)] {
        if part.is_empty() {
            return Err(PipelineError::Invalid(format!("{name} partition has no tokens")));
        }
    }
    let vocab = build_vocab(train_rows.iter().copied());
    let mut train_ex = encode_rows(train_rows.iter().copied(), &vocab)?;
    let mut test_ex = encode_rows(test_rows.iter().copied(), &vocab)?;
    let mut val_ex = encode_rows(val_rows.iter().copied(), &vocab)?;
    let stats = fit_normalizer(&train_ex)?;
    for ex in train_ex.iter_mut().chain(test_ex.iter_mut()).chain(val_ex.iter_mut()) {
        stats.apply_in_place(&mut ex.features);
    }

    let config = NetworkConfig {
        input_dim: stats.dim(),
        ..settings.network.clone()
    };
    let dim = config.input_dim;
    let (tx, vx) = (matrix(&train_ex, dim), matrix(&val_ex, dim));
    let (ty, vy) = (labels_of(&train_ex), labels_of(&val_ex));
    let outcome = train(tx.view(), &ty, vx.view(), &vy, &config)?;

    let score = |model: &Mlp, ex: &[EncodedExample]| -> Result<MetricsReport, PipelineError> {
        let p = model.predict_proba(matrix(ex, dim).view())?;
        let pred: Vec<u8> = p.iter().map(|&p| decide(p, config.threshold)).collect();
        Ok(compute_metrics(&pred, &labels_of(ex))?)
    };
    let test_report = score(&outcome.model, &test_ex)?;
    let validation_report = score(&outcome.model, &val_ex)?;

    let checkpoint = ModelCheckpoint::new(
        &outcome.model,
        stats,
        vocab,
        config.threshold,
        TrainingMetadata {
            epochs_run: outcome.epochs_run,
            best_epoch: outcome.best_epoch,
            final_validation_f1: outcome.best_val_f1,
            config,
        },
    );
    Ok(TrainRun {
        checkpoint,
        history: outcome.history,
        test_report,
        validation_report,
        partition,
        data: EncodedSplit {
            train: train_ex,
            test: test_ex,
            validation: val_ex,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub test: MetricsReport,
    pub validation: MetricsReport,
    pub partition: DatasetSplit<String>,
}

fn write_with<F>(path: &Path, f: F) -> Result<(), PipelineError>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> Result<(), PipelineError>,
{
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    f(&mut w)?;
    w.flush().map_err(io_err(path))
}

fn csv_err(path: &Path, e: csv::Error) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Write `checkpoint.json`, `history.csv`, `report.json` and `report.txt`;
/// with `encoded`, also the normalized partitions as CSV plus
/// `dataset.json`.
pub fn write_train_outputs(run: &TrainRun, out_dir: &Path, encoded: bool) -> Result<(), PipelineError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    save_checkpoint(&run.checkpoint, &out_dir.join("checkpoint.json"))?;
    let p = out_dir.join("history.csv");
    write_with(&p, |w| write_history_csv(w, &run.history).map_err(|e| csv_err(&p, e)))?;
    let report = ReportFile {
        test: run.test_report.clone(),
        validation: run.validation_report.clone(),
        partition: run.partition.clone(),
    };
    let p = out_dir.join("report.json");
    write_with(&p, |w| {
        serde_json::to_writer_pretty(&mut *w, &report).map_err(json_err(&p))?;
        w.write_all(b"\n").map_err(io_err(&p))
    })?;
    let p = out_dir.join("report.txt");
    let text = format!(
        "test\n{}\nvalidation\n{}",
        render_report(&run.test_report),
        render_report(&run.validation_report)
    );
    fs::write(&p, text).map_err(io_err(&p))?;
    if encoded {
        let vocab = &run.checkpoint.vocab;
        for (name, ex) in [("train", &run.data.train), ("test", &run.data.test), ("validation", &run.data.validation)] {
            let p = out_dir.join(format!("{name}.csv"));
            write_with(&p, |w| write_encoded_csv(w, ex, vocab).map_err(|e| csv_err(&p, e)))?;
        }
        let sidecar = DatasetSidecar::new(run.checkpoint.norm_stats.clone(), vocab.clone());
        let p = out_dir.join("dataset.json");
        write_with(&p, |w| write_dataset_sidecar(w, &sidecar).map_err(json_err(&p)))?;
    }
    Ok(())
}

pub fn save_checkpoint(ck: &ModelCheckpoint, path: &Path) -> Result<(), PipelineError> {
    write_with(path, |w| {
        serde_json::to_writer(&mut *w, ck).map_err(json_err(path))?;
        w.write_all(b"\n").map_err(io_err(path))
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint, PipelineError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(f)).map_err(json_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPx {
    pub left: u32,
    pub top: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayToken {
    pub token_index: usize,
    pub page_num: u32,
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: BoxPx,
    pub probability: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayPage {
    pub page_num: u32,
    pub width: u32,
    pub height: u32,
}

/// Per-token predictions for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub schema: String,
    pub doc_id: String,
    pub threshold: f64,
    pub pages: Vec<OverlayPage>,
    pub tokens: Vec<OverlayToken>,
}

/// A loaded checkpoint ready for inference.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub checkpoint: ModelCheckpoint,
    pub tolerance: AlignmentTolerance,
    model: Mlp,
}

impl Predictor {
    pub fn new(checkpoint: ModelCheckpoint) -> Result<Self, PipelineError> {
        checkpoint.check_schema(FEATURE_SCHEMA_VERSION)?;
        let model = checkpoint.to_mlp()?;
        Ok(Predictor {
            checkpoint,
            tolerance: AlignmentTolerance::Auto,
            model,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Predictor::new(load_checkpoint(path)?)
    }

    pub fn threshold(&self) -> f64 {
        self.checkpoint.threshold
    }

    /// Probability per row, using the checkpoint's vocab and normalization.
    pub fn probabilities(&self, rows: &[FeatureRow]) -> Result<Vec<f64>, PipelineError> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let mut examples = encode_rows(rows, &self.checkpoint.vocab)?;
        for ex in examples.iter_mut() {
            ex.features = apply_normalizer(&ex.features, &self.checkpoint.norm_stats);
        }
        let x = matrix(&examples, self.model.input_dim());
        Ok(self.model.predict_proba(x.view())?.to_vec())
    }

    pub fn predict_labels(&self, rows: &[FeatureRow]) -> Result<Vec<u8>, PipelineError> {
        Ok(self
            .probabilities(rows)?
            .into_iter()
            .map(|p| decide(p, self.threshold()))
            .collect())
    }

    pub fn predict_document(&self, doc: &DocumentModel) -> Result<Overlay, PipelineError> {
        let rows = featurize_document(doc, self.tolerance);
        let probs = self.probabilities(&rows)?;
        let tokens = doc
            .tokens()
            .enumerate()
            .zip(probs)
            .map(|((token_index, (_, t)), probability)| OverlayToken {
                token_index,
                page_num: t.page_num,
                text: t.text.clone(),
                bbox: BoxPx {
                    left: t.left,
                    top: t.top,
                    width: t.width,
                    height: t.height,
                },
                probability,
                label: decide(probability, self.threshold()),
            })
            .collect();
        Ok(Overlay {
            schema: OVERLAY_SCHEMA.to_string(),
            doc_id: doc.doc_id.clone(),
            threshold: self.threshold(),
            pages: doc
                .pages
                .iter()
                .map(|p| OverlayPage {
                    page_num: p.page_num,
                    width: p.page_width,
                    height: p.page_height,
                })
                .collect(),
            tokens,
        })
    }

    /// Score labelled rows.
    pub fn evaluate(&self, rows: &[FeatureRow]) -> Result<MetricsReport, PipelineError> {
        let pred = self.predict_labels(rows)?;
        let truth: Vec<u8> = rows.iter().map(|r| r.label).collect();
        Ok(compute_metrics(&pred, &truth)?)
    }
}
