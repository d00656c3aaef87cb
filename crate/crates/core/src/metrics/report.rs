use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{average_precision, OverlapRule, confusion_matrix, mean_present, per_class_f1, rle_segments, PerSamplePredictions};
use crate::error::DataError;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Strictly increasing tIoU thresholds in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TiouThresholds(Vec<f64>);

impl TiouThresholds {
    pub fn new(values: Vec<f64>) -> Result<Self, DataError> {
        let ok = !values.is_empty()
            && values.iter().all(|&t| t > 0.0 && t <= 1.0)
            && values.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(DataError::Invalid(format!(
                "tIoU thresholds must be strictly increasing in (0, 1], got {values:?}"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl Default for TiouThresholds {
    fn default() -> Self {
        Self(vec![0.3, 0.4, 0.5, 0.6, 0.7])
    }
}

impl TryFrom<Vec<f64>> for TiouThresholds {
    type Error = DataError;
    fn try_from(v: Vec<f64>) -> Result<Self, DataError> {
        Self::new(v)
    }
}

impl From<TiouThresholds> for Vec<f64> {
    fn from(t: TiouThresholds) -> Self {
        t.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tiou_thresholds: TiouThresholds,
    /// How overlapping window predictions are merged per sample.
    pub overlap_rule: OverlapRule,
    /// Class treated as background: its runs never become segments.
    pub null_class: Option<usize>,
    pub null_in_f1: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tiou_thresholds: TiouThresholds::default(),
            overlap_rule: OverlapRule::LastWins,
            null_class: None,
            null_in_f1: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub subject_id: String,
    pub evaluated_samples: u64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<Option<f64>>,
    /// Class-averaged AP at each threshold; `None` without any ground-truth segment.
    pub ap_per_threshold: Vec<Option<f64>>,
    /// Threshold-averaged mAP.
    pub map: Option<f64>,
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub subjects: Vec<SubjectMetrics>,
    pub mean_macro_f1: f64,
    pub mean_map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub n_classes: usize,
    pub tiou_thresholds: Vec<f64>,
    pub null_class: Option<usize>,
    pub seeds: Vec<SeedMetrics>,
    /// Mean over subjects, then over seeds.
    pub macro_f1: f64,
    pub map: Option<f64>,
    /// From the confusion matrix pooled over all subjects and seeds.
    pub per_class_f1: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
}

fn f1_mean(per_class: &[Option<f64>], cfg: &EvalConfig) -> f64 {
    mean_present(
        per_class
            .iter()
            .enumerate()
            .map(|(c, f)| if !cfg.null_in_f1 && Some(c) == cfg.null_class { None } else { *f }),
    )
}

/// Scores one subject's covered samples against its per-sample ground truth.
pub fn evaluate_subject(
    subject_id: &str,
    truth: &[usize],
    pred: &PerSamplePredictions,
    cfg: &EvalConfig,
) -> Result<SubjectMetrics, DataError> {
    if truth.len() != pred.len() {
        return Err(DataError::Invalid(format!(
            "{subject_id}: {} predictions for {} ground-truth samples",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.n_classes;
    let (p, t): (Vec<usize>, Vec<usize>) = (0..truth.len())
        .filter(|&i| pred.covered[i])
        .map(|i| (pred.classes[i], truth[i]))
        .unzip();
    let confusion = confusion_matrix(&p, &t, n)?;
    let per_class = per_class_f1(&confusion);

    let mut gt_pred = PerSamplePredictions::from_labels(truth, n);
    gt_pred.covered.clone_from(&pred.covered);
    let gt_segments = rle_segments(&gt_pred, cfg.null_class);
    let pred_segments = rle_segments(pred, cfg.null_class);
    let ap_per_threshold: Vec<Option<f64>> = cfg
        .tiou_thresholds
        .values()
        .iter()
        .map(|&th| {
            let aps: Vec<Option<f64>> = (0..n)
                .map(|c| average_precision(&pred_segments, &gt_segments, c, th))
                .collect();
            aps.iter().any(Option::is_some).then(|| mean_present(aps.into_iter()))
        })
        .collect();
    let map = ap_per_threshold[0].is_some().then(|| mean_present(ap_per_threshold.iter().copied()));
    Ok(SubjectMetrics {
        subject_id: subject_id.to_string(),
        evaluated_samples: p.len() as u64,
        macro_f1: f1_mean(&per_class, cfg),
        per_class_f1: per_class,
        ap_per_threshold,
        map,
        confusion,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    mean_present(values.map(Some))
}

/// Averages subjects within each seed, then seeds.
pub fn aggregate_seeds(runs: Vec<(u64, Vec<SubjectMetrics>)>, n_classes: usize, cfg: &EvalConfig) -> MetricsReport {
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    let seeds: Vec<SeedMetrics> = runs
        .into_iter()
        .map(|(seed, subjects)| {
            for s in &subjects {
                for (row, srow) in confusion.iter_mut().zip(&s.confusion) {
                    for (a, b) in row.iter_mut().zip(srow) {
                        *a += b;
                    }
                }
            }
            let maps: Vec<Option<f64>> = subjects.iter().map(|s| s.map).collect();
            SeedMetrics {
                seed,
                mean_macro_f1: mean(subjects.iter().map(|s| s.macro_f1)),
                mean_map: maps.iter().any(Option::is_some).then(|| mean_present(maps.into_iter())),
                subjects,
            }
        })
        .collect();
    let per_class = per_class_f1(&confusion);
    let maps: Vec<Option<f64>> = seeds.iter().map(|s| s.mean_map).collect();
    MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        n_classes,
        tiou_thresholds: cfg.tiou_thresholds.values().to_vec(),
        null_class: cfg.null_class,
        macro_f1: mean(seeds.iter().map(|s| s.mean_macro_f1)),
        map: maps.iter().any(Option::is_some).then(|| mean_present(maps.into_iter())),
        seeds,
        per_class_f1: per_class,
        confusion,
    }
}

/// Confusion matrix as CSV: one row per true class, one column per prediction.
pub fn write_confusion_csv(confusion: &[Vec<u64>], path: &Path) -> Result<(), DataError> {
    let mut out = String::from("truth");
    for c in 0..confusion.len() {
        out.push_str(&format!(",pred_{c}"));
    }
    out.push('\n');
    for (c, row) in confusion.iter().enumerate() {
        out.push_str(&c.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}
