//! Binary classification report: per-class precision, recall and F1,
//! accuracy, and macro / support-weighted averages.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("cannot compute metrics on empty input")]
    EmptyInput,
    #[error("value {0} is not a binary label")]
    NonBinary(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_0: ClassMetrics,
    pub class_1: ClassMetrics,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub confusion: Confusion,
    pub total: u64,
    /// Set when some precision or recall had a zero denominator and was
    /// reported as 0.
    pub zero_division: bool,
}

impl MetricsReport {
    pub fn class(&self, c: u8) -> &ClassMetrics {
        if c == 0 {
            &self.class_0
        } else {
            &self.class_1
        }
    }
}

fn ratio(num: u64, den: u64, undefined: &mut bool) -> f64 {
    if den == 0 {
        *undefined = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(tp: u64, fp: u64, fn_: u64, undefined: &mut bool) -> ClassMetrics {
    let precision = ratio(tp, tp + fp, undefined);
    let recall = ratio(tp, tp + fn_, undefined);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: tp + fn_,
    }
}

/// Counts from which the report is derived.
pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<Confusion, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut c = Confusion::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            (p, y) => return Err(MetricsError::NonBinary(if p > 1 { p } else { y })),
        }
    }
    Ok(c)
}

pub fn report_from_confusion(c: Confusion) -> MetricsReport {
    let mut undefined = false;
    let class_1 = class_metrics(c.tp, c.fp, c.fn_, &mut undefined);
    // Class 0 as the positive class: its TP is TN, FP is FN and vice versa.
    let class_0 = class_metrics(c.tn, c.fn_, c.fp, &mut undefined);
    let total = c.total();
    let n = total as f64;
    let accuracy = (c.tp + c.tn) as f64 / n;
    let macro_avg = Averages {
        precision: (class_0.precision + class_1.precision) / 2.0,
        recall: (class_0.recall + class_1.recall) / 2.0,
        f1: (class_0.f1 + class_1.f1) / 2.0,
    };
    let (w0, w1) = (class_0.support as f64 / n, class_1.support as f64 / n);
    let weighted_avg = Averages {
        precision: w0 * class_0.precision + w1 * class_1.precision,
        recall: w0 * class_0.recall + w1 * class_1.recall,
        f1: w0 * class_0.f1 + w1 * class_1.f1,
    };
    MetricsReport {
        class_0,
        class_1,
        accuracy,
        macro_avg,
        weighted_avg,
        confusion: c,
        total,
        zero_division: undefined,
    }
}

pub fn compute_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricsReport, MetricsError> {
    confusion(predictions, labels).map(report_from_confusion)
}

/// Row labels of the rendered table, top to bottom.
pub const REPORT_ROWS: [&str; 5] = ["0", "1", "accuracy", "macro avg", "weighted avg"];

/// Plain-text table with two-decimal cells.
pub fn render_report(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>12} {:>9} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1-score", "support");
    let _ = writeln!(s);
    for (name, m) in [("0", &report.class_0), ("1", &report.class_1)] {
        let _ = writeln!(
            s,
            "{:>12} {:>9.2} {:>9.2} {:>9.2} {:>9}",
            name, m.precision, m.recall, m.f1, m.support
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:>12} {:>9} {:>9} {:>9.2} {:>9}", "accuracy", "", "", report.accuracy, report.total);
    for (name, a) in [("macro avg", &report.macro_avg), ("weighted avg", &report.weighted_avg)] {
        let _ = writeln!(
            s,
            "{:>12} {:>9.2} {:>9.2} {:>9.2} {:>9}",
            name, a.precision, a.recall, a.f1, report.total
        );
    }
    s
}

/// The row labels present in a rendered report.
pub fn rendered_row_labels(rendered: &str) -> Vec<String> {
    rendered
        .lines()
        .skip(1)
        .filter_map(|line| {
            let label: Vec<&str> = line
                .split_whitespace()
                .take_while(|cell| cell.parse::<f64>().is_err() || REPORT_ROWS.contains(cell))
                .collect();
            (!label.is_empty()).then(|| label.join(" "))
        })
        .collect()
}
