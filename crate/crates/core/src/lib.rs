//! Table-element extraction from OCR token output.
//!
//! The pipeline runs OCR TSV through [`ingest`], computes per-token layout
//! and text features in [`features`] (text patterns come from
//! [`textpattern`]), encodes and splits them in [`dataset`], and trains the
//! [`neuralnet`] classifier that marks each token as part of the product
//! table or not. [`evalmetrics`] scores predictions, [`synthgen`] produces
//! labelled synthetic invoices and [`pipeline`] wires the stages together
//! over files on disk.

pub mod dataset;
pub mod evalmetrics;
pub mod features;
pub mod ingest;
pub mod neuralnet;
pub mod textpattern;
pub mod synthgen;
pub mod pipeline;
