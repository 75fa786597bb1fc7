//! Review service: browse documents with their predictions and record
//! human label corrections.
//!
//! Corpus files are read once at startup and never written. Corrections go
//! to an append-only label log; exports merge them over the corpus seed
//! labels.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use tabext_core::dataset::{export_effective_labels, write_label_records, LabelKey, LabelLog, LabelSource, LabelStore};
use tabext_core::ingest::DocumentModel;
use tabext_core::pipeline::{
    corpus_files, load_corpus_labels, load_document, BoxPx, OverlayPage, PipelineError, Predictor,
};

pub const REVIEW_SCHEMA: &str = "tabext-review/1";
pub const DEFAULT_PORT: u16 = 8970;

#[derive(Debug, Clone)]
pub struct ReviewConfig {
    pub corpus_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Human correction log; created if missing.
    pub labels_path: PathBuf,
    pub export_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
}

struct DocEntry {
    doc: DocumentModel,
    /// `(probability, label)` per token when a checkpoint is loaded.
    predictions: Option<Vec<(f64, u8)>>,
}

pub struct ReviewState {
    docs: BTreeMap<String, DocEntry>,
    seed: LabelStore,
    checkpoint_id: Option<String>,
    export_dir: PathBuf,
    // single writer for label mutations
    log: Mutex<LabelLog>,
}

impl ReviewState {
    pub fn load(cfg: &ReviewConfig) -> Result<Self, PipelineError> {
        let predictor = cfg.checkpoint.as_deref().map(Predictor::load).transpose()?;
        let mut docs = BTreeMap::new();
        for path in corpus_files(&cfg.corpus_dir)? {
            let doc = load_document(&path)?;
            let predictions = match &predictor {
                Some(p) => {
                    let overlay = p.predict_document(&doc)?;
                    Some(overlay.tokens.iter().map(|t| (t.probability, t.label)).collect())
                }
                None => None,
            };
            docs.insert(doc.doc_id.clone(), DocEntry { doc, predictions });
        }
        let known: HashMap<String, usize> = docs.iter().map(|(k, d)| (k.clone(), d.doc.token_count())).collect();
        let seed = load_corpus_labels(&cfg.corpus_dir)?.unwrap_or_default();
        let log = LabelLog::open(&cfg.labels_path, LabelStore::with_known_tokens(known))?;
        Ok(ReviewState {
            docs,
            seed,
            checkpoint_id: cfg
                .checkpoint
                .as_ref()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned()),
            export_dir: cfg.export_dir.clone(),
            log: Mutex::new(log),
        })
    }

    fn human(&self) -> std::sync::MutexGuard<'_, LabelLog> {
        self.log.lock().unwrap_or_else(|e| e.into_inner())
    }
}

struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "schema": REVIEW_SCHEMA, "error": message.into() }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

#[derive(Serialize)]
struct DocumentSummary {
    doc_id: String,
    page_count: usize,
    token_count: usize,
    reviewed_fraction: f64,
}

async fn list_documents(State(st): State<Arc<ReviewState>>) -> Json<Value> {
    let mut reviewed: HashMap<String, usize> = HashMap::new();
    for (k, _) in st.human().store().iter() {
        *reviewed.entry(k.doc_id.clone()).or_default() += 1;
    }
    let documents: Vec<DocumentSummary> = st
        .docs
        .iter()
        .map(|(id, e)| {
            let n = e.doc.token_count();
            let r = reviewed.get(id).copied().unwrap_or(0);
            DocumentSummary {
                doc_id: id.clone(),
                page_count: e.doc.pages.len(),
                token_count: n,
                reviewed_fraction: if n == 0 { 0.0 } else { r as f64 / n as f64 },
            }
        })
        .collect();
    Json(json!({ "schema": REVIEW_SCHEMA, "checkpoint": st.checkpoint_id, "documents": documents }))
}

#[derive(Serialize)]
struct TokenView {
    token_index: usize,
    page_num: u32,
    text: String,
    #[serde(rename = "box")]
    bbox: BoxPx,
    probability: Option<f64>,
    predicted_label: Option<u8>,
    seed_label: Option<u8>,
    human_label: Option<u8>,
    revision: Option<u64>,
}

fn entry<'a>(st: &'a ReviewState, id: &str) -> Result<&'a DocEntry, ApiError> {
    st.docs
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown document {id:?}")))
}

async fn document_tokens(
    State(st): State<Arc<ReviewState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Value>, ApiError> {
    let e = entry(&st, &id)?;
    let human: HashMap<usize, (u8, u64)> = {
        let log = st.human();
        log.store()
            .iter()
            .filter(|(k, _)| k.doc_id == id)
            .map(|(k, r)| (k.token_index, (r.label, r.revision)))
            .collect()
    };
    let tokens: Vec<TokenView> = e
        .doc
        .tokens()
        .enumerate()
        .map(|(i, (_, t))| {
            let pred = e.predictions.as_ref().map(|p| p[i]);
            let h = human.get(&i);
            TokenView {
                token_index: i,
                page_num: t.page_num,
                text: t.text.clone(),
                bbox: BoxPx {
                    left: t.left,
                    top: t.top,
                    width: t.width,
                    height: t.height,
                },
                probability: pred.map(|p| p.0),
                predicted_label: pred.map(|p| p.1),
                seed_label: st.seed.get(&LabelKey::new(id.clone(), i)).map(|r| r.label),
                human_label: h.map(|h| h.0),
                revision: h.map(|h| h.1),
            }
        })
        .collect();
    let pages: Vec<OverlayPage> = e
        .doc
        .pages
        .iter()
        .map(|p| OverlayPage {
            page_num: p.page_num,
            width: p.page_width,
            height: p.page_height,
        })
        .collect();
    Ok(Json(json!({ "schema": REVIEW_SCHEMA, "doc_id": id, "pages": pages, "tokens": tokens })))
}

#[derive(Deserialize)]
struct LabelWrite {
    token_index: i64,
    label: i64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LabelBody {
    List(Vec<LabelWrite>),
    Wrapped { labels: Vec<LabelWrite> },
}

async fn post_labels(
    State(st): State<Arc<ReviewState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let e = entry(&st, &id)?;
    let writes = match serde_json::from_slice::<LabelBody>(&body) {
        Ok(LabelBody::List(w)) | Ok(LabelBody::Wrapped { labels: w }) => w,
        Err(err) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("body must be a list of {{token_index, label}}: {err}"),
            ))
        }
    };
    let n = e.doc.token_count() as i64;
    let bad_labels: Vec<Value> = writes
        .iter()
        .filter(|w| !matches!(w.label, 0 | 1))
        .map(|w| json!({ "token_index": w.token_index, "label": w.label }))
        .collect();
    let unknown: Vec<i64> = writes
        .iter()
        .filter(|w| w.token_index < 0 || w.token_index >= n)
        .map(|w| w.token_index)
        .collect();
    if !bad_labels.is_empty() || !unknown.is_empty() {
        let mut err = ApiError::new(StatusCode::BAD_REQUEST, "rejected label batch; nothing was written");
        err.body["invalid_labels"] = json!(bad_labels);
        err.body["unknown_tokens"] = json!(unknown);
        return Err(err);
    }
    let batch: Vec<(LabelKey, i64)> = writes
        .iter()
        .map(|w| (LabelKey::new(id.clone(), w.token_index as usize), w.label))
        .collect();
    let records = st
        .human()
        .write_batch(&batch, LabelSource::Human)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let revisions: Vec<Value> = writes
        .iter()
        .zip(&records)
        .map(|(w, r)| json!({ "token_index": w.token_index, "label": r.label, "revision": r.revision }))
        .collect();
    Ok(Json(json!({ "schema": REVIEW_SCHEMA, "accepted": records.len(), "revisions": revisions })))
}

async fn export_training_set(State(st): State<Arc<ReviewState>>) -> Result<Json<Value>, ApiError> {
    let (records, version, human_count) = {
        let log = st.human();
        let store = log.store();
        (export_effective_labels(&st.seed, store), store.version(), store.len())
    };
    std::fs::create_dir_all(&st.export_dir).map_err(internal)?;
    let path = st.export_dir.join(format!("training-labels-v{version}.jsonl"));
    let mut tmp = tempfile::NamedTempFile::new_in(&st.export_dir).map_err(internal)?;
    write_label_records(std::io::BufWriter::new(tmp.as_file_mut()), &records).map_err(internal)?;
    tmp.as_file_mut().flush().map_err(internal)?;
    tmp.persist(&path).map_err(internal)?;
    Ok(Json(json!({
        "schema": REVIEW_SCHEMA,
        "path": path,
        "version": version,
        "records": records.len(),
        "human_records": human_count,
    })))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such endpoint")
}

pub fn router(state: Arc<ReviewState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/documents", get(list_documents))
        .route("/documents/{id}/tokens", get(document_tokens))
        .route("/documents/{id}/labels", post(post_labels))
        .route("/export-training-set", post(export_training_set))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}

/// Serve until ctrl-c.
pub async fn serve(cfg: ReviewConfig, addr: SocketAddr) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let state = Arc::new(ReviewState::load(&cfg)?);
    let app = router(state, cfg.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
