//! Per-sample evaluation: unwindowing, macro-F1, confusion matrices,
//! segment extraction and segment-level mAP.

mod report;
mod segments;

pub use report::{
    aggregate_seeds, evaluate_subject, write_confusion_csv, EvalConfig, MetricsReport, SeedMetrics, SubjectMetrics,
    TiouThresholds, METRICS_SCHEMA_VERSION,
};
pub use segments::{average_precision, rle_segments, tiou, Segment};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// A window's predicted class and class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPrediction {
    pub sample_range: Range<usize>,
    pub class: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapRule {
    /// The latest window covering a sample decides it.
    #[default]
    LastWins,
    /// Most frequent class among covering windows, ties to the latest;
    /// probabilities are averaged.
    Majority,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerSamplePredictions {
    pub classes: Vec<usize>,
    /// Row-major `[N, n_classes]`; rows of uncovered samples are zero.
    pub probs: Vec<f64>,
    pub n_classes: usize,
    pub covered: Vec<bool>,
}

impl PerSamplePredictions {
    /// Fully covered one-hot predictions, e.g. to treat ground truth as a prediction.
    pub fn from_labels(labels: &[usize], n_classes: usize) -> Self {
        let mut probs = vec![0.0; labels.len() * n_classes];
        for (t, &l) in labels.iter().enumerate() {
            probs[t * n_classes + l] = 1.0;
        }
        Self {
            classes: labels.to_vec(),
            probs,
            n_classes,
            covered: vec![true; labels.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn prob(&self, t: usize, class: usize) -> f64 {
        self.probs[t * self.n_classes + class]
    }
}

/// Spreads window predictions back onto the `n` samples of a recording.
pub fn unwindow(
    windows: &[WindowPrediction],
    n: usize,
    n_classes: usize,
    rule: OverlapRule,
) -> Result<PerSamplePredictions, DataError> {
    for w in windows {
        if w.sample_range.start >= w.sample_range.end || w.sample_range.end > n {
            return Err(DataError::Invalid(format!(
                "window range {:?} outside recording of {n} samples",
                w.sample_range
            )));
        }
        if w.class >= n_classes || w.probs.len() != n_classes {
            return Err(DataError::Invalid(format!(
                "window prediction must have a class below {n_classes} and {n_classes} probabilities"
            )));
        }
    }
    let mut out = PerSamplePredictions {
        classes: vec![0; n],
        probs: vec![0.0; n * n_classes],
        n_classes,
        covered: vec![false; n],
    };
    match rule {
        OverlapRule::LastWins => {
            for w in windows {
                for t in w.sample_range.clone() {
                    out.classes[t] = w.class;
                    out.probs[t * n_classes..(t + 1) * n_classes].copy_from_slice(&w.probs);
                    out.covered[t] = true;
                }
            }
        }
        OverlapRule::Majority => {
            let mut votes = vec![0usize; n * n_classes];
            let mut latest = vec![0usize; n * n_classes];
            let mut depth = vec![0usize; n];
            for (i, w) in windows.iter().enumerate() {
                for t in w.sample_range.clone() {
                    votes[t * n_classes + w.class] += 1;
                    latest[t * n_classes + w.class] = i;
                    depth[t] += 1;
                    for (p, q) in out.probs[t * n_classes..(t + 1) * n_classes].iter_mut().zip(&w.probs) {
                        *p += q;
                    }
                }
            }
            for t in (0..n).filter(|&t| depth[t] > 0) {
                let key = |c: usize| (votes[t * n_classes + c], latest[t * n_classes + c]);
                out.classes[t] = (0..n_classes).max_by_key(|&c| key(c)).expect("n_classes > 0");
                for p in &mut out.probs[t * n_classes..(t + 1) * n_classes] {
                    *p /= depth[t] as f64;
                }
                out.covered[t] = true;
            }
        }
    }
    Ok(out)
}

/// `confusion[truth][pred]` sample counts.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>, DataError> {
    if pred.len() != truth.len() {
        return Err(DataError::Invalid(format!(
            "prediction length {} differs from ground truth length {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(DataError::Invalid(format!("class index out of range for {n_classes} classes")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// F1 per class from a confusion matrix; `None` for classes absent from
/// both predictions and ground truth.
pub fn per_class_f1(confusion: &[Vec<u64>]) -> Vec<Option<f64>> {
    let n = confusion.len();
    (0..n)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            if support == 0 && predicted == 0 {
                return None;
            }
            let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let r = if support > 0 { tp / support as f64 } else { 0.0 };
            Some(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
        })
        .collect()
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Unweighted mean of per-class F1 over classes present in either sequence.
pub fn macro_f1(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64, DataError> {
    let m = confusion_matrix(pred, truth, n_classes)?;
    Ok(mean_present(per_class_f1(&m).into_iter()))
}

#[cfg(test)]
mod tests;
