use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Prediction;
use crate::model::Label;
use crate::scalar::Scalar;

/// Confusion counts with `Relevant` as the positive class. A prediction that
/// failed to parse lands in `fn` or `fp`, whichever is wrong for its truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn add(&mut self, truth: Label, predicted: Option<Label>) {
        match (truth, predicted) {
            (Label::Relevant, Some(Label::Relevant)) => self.tp += 1,
            (Label::Relevant, _) => self.fn_ += 1,
            (Label::NotRelevant, Some(Label::NotRelevant)) => self.tn += 1,
            (Label::NotRelevant, _) => self.fp += 1,
        }
    }

    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
    pub fn correct(&self) -> u64 {
        self.tp + self.tn
    }
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }
    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

/// Metrics of one (task, shots) cell, in percent.
///
/// A recall is `None` when its class has no samples in the cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics<S> {
    pub accuracy: S,
    pub recall_positive: Option<S>,
    pub recall_negative: Option<S>,
    pub confusion: Confusion,
    pub n: u64,
    pub n_positive: u64,
    pub n_negative: u64,
    pub parse_failures: u64,
}

impl<S: Scalar> CellMetrics<S> {
    /// Metrics for a confusion matrix. `confusion` must be non-empty.
    pub fn from_confusion(confusion: Confusion, parse_failures: u64) -> Self {
        let n = confusion.n();
        assert!(n > 0, "metrics of an empty cell");
        let recall = |num: u64, den: u64| (den > 0).then(|| S::percent(num, den));
        Self {
            accuracy: S::percent(confusion.correct(), n),
            recall_positive: recall(confusion.tp, confusion.positives()),
            recall_negative: recall(confusion.tn, confusion.negatives()),
            confusion,
            n,
            n_positive: confusion.positives(),
            n_negative: confusion.negatives(),
            parse_failures,
        }
    }

    pub fn convert<T: Scalar>(&self) -> CellMetrics<T> {
        CellMetrics::from_confusion(self.confusion, self.parse_failures)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("prediction for unknown sample {0}")]
    UnknownSample(String),
    #[error("no predictions")]
    Empty,
}

/// Scores predictions against `truth`. The truth map wins over any label
/// carried on the predictions themselves.
pub fn compute_metrics<S: Scalar>(
    predictions: &[Prediction],
    truth: &HashMap<String, Label>,
) -> Result<CellMetrics<S>, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut confusion = Confusion::default();
    let mut failures = 0;
    for p in predictions {
        let t = *truth.get(&p.sample_id).ok_or_else(|| MetricsError::UnknownSample(p.sample_id.clone()))?;
        let predicted = p.parsed.label();
        if predicted.is_none() {
            failures += 1;
        }
        confusion.add(t, predicted);
    }
    Ok(CellMetrics::from_confusion(confusion, failures))
}

/// `100 * num / den` rounded half-up to one decimal, computed on integers.
pub fn format_percent(num: u64, den: u64) -> String {
    assert!(den > 0, "percentage of zero");
    let tenths = (2000 * num as u128 + den as u128) / (2 * den as u128);
    format!("{}.{}", tenths / 10, tenths % 10)
}

/// Signed `100 * num / den` to one decimal, halves rounded away from zero.
/// Positive values carry a `+`; anything that rounds to zero prints `0.0`.
pub fn format_signed_percent(num: i128, den: i128) -> String {
    assert!(den > 0, "percentage of zero");
    let mag = num.unsigned_abs();
    let den = den as u128;
    let tenths = (2000 * mag + den) / (2 * den);
    let sign = match (num.signum(), tenths) {
        (_, 0) => "",
        (1, _) => "+",
        _ => "-",
    };
    format!("{sign}{}.{}", tenths / 10, tenths % 10)
}

impl<S> CellMetrics<S> {
    pub fn accuracy_display(&self) -> String {
        format_percent(self.confusion.correct(), self.n)
    }
    pub fn recall_positive_display(&self) -> String {
        let c = self.confusion;
        if c.positives() == 0 {
            "--".into()
        } else {
            format_percent(c.tp, c.positives())
        }
    }
    pub fn recall_negative_display(&self) -> String {
        let c = self.confusion;
        if c.negatives() == 0 {
            "--".into()
        } else {
            format_percent(c.tn, c.negatives())
        }
    }
}
