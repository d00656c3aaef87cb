//! Recordings, sliding windows, LOSO splits, ordered batches and the
//! synthetic generators used for desk-scale checks.

mod csvio;
mod synth;
mod window;

pub use csvio::{load_csv, load_csv_with_labels, load_label_map, write_csv, write_label_map, LabelMap, LABEL_MAP_FILE};
pub use synth::{synth_generate, ClassSignature, SynthSpec};
pub use window::{sliding_window, LabelRule, Window, WindowConfig, WindowedSequence};

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::tensor::Tensor;

/// One subject's per-sample labeled multichannel signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecording {
    pub subject_id: String,
    pub sampling_rate: f64,
    pub channel_names: Vec<String>,
    /// One series per channel, each of length `len()`.
    pub channels: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl RawRecording {
    pub fn new(
        subject_id: impl Into<String>,
        sampling_rate: f64,
        channel_names: Vec<String>,
        channels: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> Result<Self, DataError> {
        let rec = Self {
            subject_id: subject_id.into(),
            sampling_rate,
            channel_names,
            channels,
            labels,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.sampling_rate > 0.0 && self.sampling_rate.is_finite()) {
            return Err(DataError::Invalid(format!(
                "{}: sampling rate must be positive, got {}",
                self.subject_id, self.sampling_rate
            )));
        }
        if self.channels.is_empty() || self.channels.len() != self.channel_names.len() {
            return Err(DataError::Invalid(format!(
                "{}: {} channel names for {} channels",
                self.subject_id,
                self.channel_names.len(),
                self.channels.len()
            )));
        }
        let n = self.labels.len();
        if let Some(c) = self.channels.iter().position(|c| c.len() != n) {
            return Err(DataError::Invalid(format!(
                "{}: channel {} has {} samples, labels have {n}",
                self.subject_id,
                self.channel_names[c],
                self.channels[c].len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples `range` as a row-major `[len, C]` tensor.
    pub fn slice(&self, range: Range<usize>) -> Tensor {
        let c = self.channels.len();
        let mut data = Vec::with_capacity(range.len() * c);
        for t in range.clone() {
            data.extend(self.channels.iter().map(|ch| ch[t]));
        }
        Tensor::new(vec![range.len(), c], data).expect("slice shape")
    }
}

/// Per-channel z-score statistics fitted on training recordings only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(recordings: impl IntoIterator<Item = &'a RawRecording>) -> Result<Self, DataError> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for rec in recordings {
            if sum.is_empty() {
                sum = vec![0.0; rec.num_channels()];
                sq = vec![0.0; rec.num_channels()];
            } else if sum.len() != rec.num_channels() {
                return Err(DataError::Invalid(format!(
                    "{}: {} channels, expected {}",
                    rec.subject_id,
                    rec.num_channels(),
                    sum.len()
                )));
            }
            for (c, ch) in rec.channels.iter().enumerate() {
                sum[c] += ch.iter().sum::<f64>();
                sq[c] += ch.iter().map(|v| v * v).sum::<f64>();
            }
            count += rec.len();
        }
        if count == 0 {
            return Err(DataError::Invalid("cannot fit normalization on zero samples".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        // Constant channels keep unit scale rather than dividing by zero.
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, rec: &RawRecording) -> RawRecording {
        let mut out = rec.clone();
        for ((ch, m), s) in out.channels.iter_mut().zip(&self.mean).zip(&self.std) {
            for v in ch.iter_mut() {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LosoSplit {
    pub held_out_subject: String,
    pub train_subjects: Vec<String>,
}

/// One split per subject, each holding that subject out.
pub fn loso_splits(recordings: &[RawRecording]) -> Result<Vec<LosoSplit>, DataError> {
    if recordings.len() < 2 {
        return Err(DataError::Invalid(format!(
            "LOSO needs at least 2 subjects, got {}",
            recordings.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for r in recordings {
        if !seen.insert(r.subject_id.as_str()) {
            return Err(DataError::Invalid(format!("duplicate subject id {:?}", r.subject_id)));
        }
    }
    Ok(recordings
        .iter()
        .map(|held| LosoSplit {
            held_out_subject: held.subject_id.clone(),
            train_subjects: recordings
                .iter()
                .filter(|r| r.subject_id != held.subject_id)
                .map(|r| r.subject_id.clone())
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialPolicy {
    #[default]
    Keep,
    Drop,
}

/// A run of consecutive windows from one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub sequence: usize,
    pub windows: Range<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Stacked inputs `[B, T, C]`.
    pub fn inputs(&self, seqs: &[WindowedSequence]) -> Tensor {
        let ws = &seqs[self.sequence].windows[self.windows.clone()];
        let mut shape = vec![ws.len()];
        shape.extend_from_slice(ws[0].data.shape());
        let data = ws.iter().flat_map(|w| w.data.data().iter().copied()).collect();
        Tensor::new(shape, data).expect("uniform window shapes")
    }

    pub fn labels(&self, seqs: &[WindowedSequence]) -> Vec<usize> {
        seqs[self.sequence].windows[self.windows.clone()].iter().map(|w| w.label).collect()
    }
}

/// Time-ordered batches that never cross a sequence (subject) boundary.
pub fn make_batches(
    seqs: &[WindowedSequence],
    batch_size: usize,
    policy: PartialPolicy,
) -> Result<Vec<Batch>, DataError> {
    if batch_size == 0 {
        return Err(DataError::Invalid("batch size must be at least 1".into()));
    }
    let mut out = Vec::new();
    for (s, seq) in seqs.iter().enumerate() {
        let n = seq.windows.len();
        let mut start = 0;
        while start < n {
            let end = (start + batch_size).min(n);
            if end - start == batch_size || policy == PartialPolicy::Keep {
                out.push(Batch {
                    sequence: s,
                    windows: start..end,
                });
            }
            start = end;
        }
    }
    Ok(out)
}

/// Inverse-frequency class weights normalized to mean 1 over present classes;
/// absent classes get weight 0.
pub fn class_weights(labels: &[usize], n_classes: usize) -> Result<Vec<f64>, DataError> {
    if labels.is_empty() {
        return Err(DataError::Invalid("no labeled windows to weight".into()));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(DataError::Invalid(format!("label {l} out of range for {n_classes} classes")));
        }
        counts[l] += 1;
    }
    let total = labels.len() as f64;
    let raw: Vec<f64> = counts
        .iter()
        .enumerate()
        .map(|(c, &k)| {
            if k == 0 {
                log::warn!("class {c} absent from training windows; weight set to 0");
                0.0
            } else {
                total / (n_classes as f64 * k as f64)
            }
        })
        .collect();
    let present = counts.iter().filter(|&&k| k > 0).count() as f64;
    let mean = raw.iter().sum::<f64>() / present;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

#[cfg(test)]
mod tests;
