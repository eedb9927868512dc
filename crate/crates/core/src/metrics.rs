//! Confusion matrix and macro-averaged classification metrics. Normal is
//! the negative class, arc the positive one.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bench::LatencyStats;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    /// `(correct, total)`; the exact accuracy as a fraction.
    pub fn accuracy_ratio(&self) -> (u64, u64) {
        (self.tp + self.tn, self.total())
    }
}

/// Counts (label, prediction) pairs.
pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    ensure!(
        predictions.len() == labels.len(),
        InvalidArgument,
        "{} predictions but {} labels",
        predictions.len(),
        labels.len()
    );
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        ensure!(p <= 1 && l <= 1, InvalidArgument, "classes must be 0 or 1, got prediction {p}, label {l}");
        match (l, p) {
            (0, 0) => cm.tn += 1,
            (0, _) => cm.fp += 1,
            (_, 0) => cm.fn_ += 1,
            _ => cm.tp += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub normal: ClassMetrics,
    pub arc: ClassMetrics,
    /// Set when a 0/0 ratio was taken as 0.
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub latency: Option<LatencyStats>,
}

fn ratio(num: u64, den: u64, what: &str, warnings: &mut Vec<String>) -> f64 {
    if den == 0 {
        warnings.push(format!("{what} is 0/0, reported as 0"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy plus macro precision and recall; F1 is their harmonic mean.
pub fn report(cm: &ConfusionMatrix) -> Result<EvalReport> {
    ensure!(cm.total() > 0, InvalidArgument, "empty confusion matrix");
    let mut warnings = Vec::new();
    let arc = ClassMetrics {
        precision: ratio(cm.tp, cm.tp + cm.fp, "arc precision", &mut warnings),
        recall: ratio(cm.tp, cm.tp + cm.fn_, "arc recall", &mut warnings),
    };
    let normal = ClassMetrics {
        precision: ratio(cm.tn, cm.tn + cm.fn_, "normal precision", &mut warnings),
        recall: ratio(cm.tn, cm.tn + cm.fp, "normal recall", &mut warnings),
    };
    let precision = (arc.precision + normal.precision) / 2.0;
    let recall = (arc.recall + normal.recall) / 2.0;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let (correct, total) = cm.accuracy_ratio();
    Ok(EvalReport {
        confusion: *cm,
        accuracy: correct as f64 / total as f64,
        precision,
        recall,
        f1,
        normal,
        arc,
        warnings,
        latency: None,
    })
}

pub const TSV_HEADER: &str = "accuracy\tprecision\trecall\tf1\ttn\tfp\tfn\ttp";

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn tsv_row(&self) -> String {
        let c = &self.confusion;
        format!(
            "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}",
            self.accuracy, self.precision, self.recall, self.f1, c.tn, c.fp, c.fn_, c.tp
        )
    }

    /// Confusion matrix with actual classes as rows and predictions as
    /// columns, followed by the summary metrics.
    pub fn render_text(&self) -> String {
        let c = &self.confusion;
        let w = [c.tn, c.fp, c.fn_, c.tp]
            .iter()
            .map(|v| v.to_string().len())
            .max()
            .unwrap_or(1)
            .max(6);
        let mut s = String::new();
        let _ = writeln!(s, "{:>16}  {:>w$}  {:>w$}", "predicted:", "Normal", "Arc");
        let _ = writeln!(s, "{:>16}  {:>w$}  {:>w$}", "actual Normal", c.tn, c.fp);
        let _ = writeln!(s, "{:>16}  {:>w$}  {:>w$}", "actual Arc", c.fn_, c.tp);
        let (correct, total) = c.accuracy_ratio();
        let _ = writeln!(s);
        let _ = writeln!(s, "accuracy   {:.4}  ({correct}/{total})", self.accuracy);
        let _ = writeln!(s, "precision  {:.4}", self.precision);
        let _ = writeln!(s, "recall     {:.4}", self.recall);
        let _ = writeln!(s, "f1         {:.4}", self.f1);
        for warning in &self.warnings {
            let _ = writeln!(s, "warning: {warning}");
        }
        s
    }
}
