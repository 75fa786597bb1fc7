use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use tabext_core::evalmetrics;
use tabext_core::features::{featurize_document, AlignmentTolerance};
use tabext_core::ingest::{parse_tsv_str, DocumentModel};
use tabext_core::pipeline::{PipelineError, Predictor};
use tabext_core::synthgen::{self, LayoutSpec};
use tabext_core::textpattern;

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for x in items {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let d = PyDict::new(py);
            for (k, x) in map {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn ser<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_value(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &json)
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pipeline_err(e: PipelineError) -> PyErr {
    match e {
        PipelineError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

/// Pattern symbol ("?", "W", "N", "F" or "A") of one token text.
#[pyfunction]
fn classify_text_pattern(text: &str) -> PyResult<String> {
    textpattern::classify_text_pattern(text)
        .map(|p| p.symbol().to_string())
        .map_err(value_err)
}

/// Space-joined pattern symbols of a line's token texts.
#[pyfunction]
fn line_block_regex(texts: Vec<String>) -> String {
    textpattern::pattern_string(texts.iter().map(String::as_str))
}

#[pyclass(name = "Document", module = "tabext", frozen)]
struct PyDocument {
    inner: DocumentModel,
}

#[pymethods]
impl PyDocument {
    #[getter]
    fn doc_id(&self) -> &str {
        &self.inner.doc_id
    }

    #[getter]
    fn token_count(&self) -> usize {
        self.inner.token_count()
    }

    #[getter]
    fn page_count(&self) -> usize {
        self.inner.pages.len()
    }

    /// Word tokens in reading order, as dicts.
    fn tokens<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let tokens: Vec<_> = self.inner.tokens().map(|(_, t)| t).collect();
        ser(py, &tokens)
    }

    fn to_tsv(&self) -> String {
        self.inner.to_tsv()
    }

    fn __len__(&self) -> usize {
        self.inner.token_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Document(doc_id={:?}, pages={}, tokens={})",
            self.inner.doc_id,
            self.inner.pages.len(),
            self.inner.token_count()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (text, doc_id = "doc"))]
fn parse_tsv(text: &str, doc_id: &str) -> PyResult<PyDocument> {
    parse_tsv_str(doc_id, text)
        .map(|inner| PyDocument { inner })
        .map_err(value_err)
}

/// Feature rows of a TSV document as a list of dicts.
#[pyfunction]
#[pyo3(signature = (text, doc_id = "doc", tolerance = None))]
fn featurize_tsv<'py>(py: Python<'py>, text: &str, doc_id: &str, tolerance: Option<u32>) -> PyResult<Bound<'py, PyAny>> {
    let doc = parse_tsv_str(doc_id, text).map_err(value_err)?;
    let tol = tolerance.map_or(AlignmentTolerance::Auto, AlignmentTolerance::Fixed);
    ser(py, &featurize_document(&doc, tol))
}

#[pyfunction]
fn compute_metrics<'py>(py: Python<'py>, predictions: Vec<u8>, labels: Vec<u8>) -> PyResult<Bound<'py, PyAny>> {
    let r = evalmetrics::compute_metrics(&predictions, &labels).map_err(value_err)?;
    ser(py, &r)
}

#[pyfunction]
fn render_report(predictions: Vec<u8>, labels: Vec<u8>) -> PyResult<String> {
    let r = evalmetrics::compute_metrics(&predictions, &labels).map_err(value_err)?;
    Ok(evalmetrics::render_report(&r))
}

/// One synthetic invoice: `(tsv_text, labels)`.
#[pyfunction]
#[pyo3(signature = (seed, noiseless = false))]
fn generate_invoice(seed: u64, noiseless: bool) -> PyResult<(String, Vec<u8>)> {
    let spec = LayoutSpec { seed, ..Default::default() };
    let spec = if noiseless { spec.noiseless() } else { spec };
    let inv = synthgen::generate_invoice(&spec).map_err(value_err)?;
    Ok((inv.tsv, inv.labels))
}

/// A trained checkpoint.
#[pyclass(name = "Model", module = "tabext", frozen)]
struct PyModel {
    inner: Predictor,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Predictor::load(&path).map(|inner| PyModel { inner }).map_err(pipeline_err)
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold()
    }

    #[getter]
    fn layer_dims(&self) -> Vec<usize> {
        self.inner.checkpoint.layer_dims.clone()
    }

    /// Prediction overlay for a TSV document.
    #[pyo3(signature = (text, doc_id = "doc"))]
    fn predict_tsv<'py>(&self, py: Python<'py>, text: &str, doc_id: &str) -> PyResult<Bound<'py, PyAny>> {
        let doc = parse_tsv_str(doc_id, text).map_err(value_err)?;
        let overlay = self.inner.predict_document(&doc).map_err(pipeline_err)?;
        ser(py, &overlay)
    }
}

#[pymodule]
fn tabext(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(classify_text_pattern, m)?)?;
    m.add_function(wrap_pyfunction!(line_block_regex, m)?)?;
    m.add_function(wrap_pyfunction!(parse_tsv, m)?)?;
    m.add_function(wrap_pyfunction!(featurize_tsv, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(render_report, m)?)?;
    m.add_function(wrap_pyfunction!(generate_invoice, m)?)?;
    m.add_class::<PyDocument>()?;
    m.add_class::<PyModel>()?;
    m.add("FEATURE_SCHEMA_VERSION", tabext_core::features::FEATURE_SCHEMA_VERSION)?;
    Ok(())
}
