use serde::{Deserialize, Serialize};

use super::PerSamplePredictions;

/// Half-open sample interval `[start, end)` labeled with one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub class: usize,
    pub confidence: f64,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Maximal runs of one class over covered samples. Runs of `null_class` are
/// dropped; uncovered samples break runs. Confidence is the mean predicted
/// probability of the run's class.
pub fn rle_segments(pred: &PerSamplePredictions, null_class: Option<usize>) -> Vec<Segment> {
    let mut out = Vec::new();
    let n = pred.len();
    let mut t = 0;
    while t < n {
        if !pred.covered[t] {
            t += 1;
            continue;
        }
        let class = pred.classes[t];
        let start = t;
        let mut conf = 0.0;
        while t < n && pred.covered[t] && pred.classes[t] == class {
            conf += pred.prob(t, class);
            t += 1;
        }
        if Some(class) != null_class {
            out.push(Segment {
                start,
                end: t,
                class,
                confidence: conf / (t - start) as f64,
            });
        }
    }
    out
}

/// Intersection over union of two sample intervals.
pub fn tiou(a: &Segment, b: &Segment) -> f64 {
    let inter = a.end.min(b.end).saturating_sub(a.start.max(b.start));
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Average precision for `class` at one tIoU threshold, or `None` when the
/// ground truth holds no segment of that class.
///
/// Predictions are taken in descending confidence (ties keep input order);
/// each claims the unmatched ground-truth segment of highest tIoU at or above
/// the threshold (ties to the earlier one). AP is the area under the
/// monotone precision envelope over recall.
pub fn average_precision(pred: &[Segment], gt: &[Segment], class: usize, threshold: f64) -> Option<f64> {
    let gt: Vec<&Segment> = gt.iter().filter(|s| s.class == class).collect();
    if gt.is_empty() {
        return None;
    }
    let mut pred: Vec<&Segment> = pred.iter().filter(|s| s.class == class).collect();
    pred.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

    let mut matched = vec![false; gt.len()];
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(pred.len());
    let mut recall = Vec::with_capacity(pred.len());
    for (k, p) in pred.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, s) in gt.iter().enumerate() {
            if matched[g] {
                continue;
            }
            let iou = tiou(p, s);
            if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            matched[g] = true;
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / gt.len() as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    Some(ap)
}
