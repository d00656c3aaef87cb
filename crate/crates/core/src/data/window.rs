use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::RawRecording;
use crate::error::DataError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Most frequent class; ties go to the class that occurs first.
    #[default]
    Majority,
    LastSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_seconds: f64,
    pub overlap_seconds: f64,
    #[serde(default)]
    pub label_rule: LabelRule,
}

impl WindowConfig {
    pub fn new(window_seconds: f64, overlap_seconds: f64) -> Self {
        Self {
            window_seconds,
            overlap_seconds,
            label_rule: LabelRule::Majority,
        }
    }

    pub fn validate(&self, rate: f64) -> Result<(), DataError> {
        if !(self.overlap_seconds >= 0.0 && self.window_seconds > self.overlap_seconds) {
            return Err(DataError::Invalid(format!(
                "window {} s must exceed overlap {} s >= 0",
                self.window_seconds, self.overlap_seconds
            )));
        }
        if self.window_samples(rate) < 1 || self.stride_samples(rate) < 1 {
            return Err(DataError::Invalid(format!(
                "window {} s / overlap {} s at {rate} Hz gives an empty window or stride",
                self.window_seconds, self.overlap_seconds
            )));
        }
        Ok(())
    }

    pub fn window_samples(&self, rate: f64) -> usize {
        (self.window_seconds * rate).round() as usize
    }

    pub fn stride_samples(&self, rate: f64) -> usize {
        ((self.window_seconds - self.overlap_seconds) * rate).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Raw samples `[T, C]`.
    pub data: Tensor,
    pub label: usize,
    pub sample_range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSequence {
    pub subject_id: String,
    pub windows: Vec<Window>,
    pub stride_samples: usize,
    pub window_samples: usize,
    /// Length of the source recording.
    pub num_samples: usize,
}

impl WindowedSequence {
    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.windows.iter().map(|w| w.label)
    }
}

fn window_label(labels: &[usize], rule: LabelRule) -> usize {
    match rule {
        LabelRule::LastSample => *labels.last().expect("non-empty window"),
        LabelRule::Majority => {
            // (count, first position) per class seen, in order of first occurrence.
            let mut tally: Vec<(usize, usize)> = Vec::new();
            for &l in labels {
                match tally.iter_mut().find(|(c, _)| *c == l) {
                    Some((_, n)) => *n += 1,
                    None => tally.push((l, 1)),
                }
            }
            let mut best = tally[0];
            for &t in &tally[1..] {
                if t.1 > best.1 {
                    best = t;
                }
            }
            best.0
        }
    }
}

/// Cuts `floor((N − T)/stride) + 1` windows starting at sample 0.
pub fn sliding_window(rec: &RawRecording, cfg: &WindowConfig) -> Result<WindowedSequence, DataError> {
    cfg.validate(rec.sampling_rate)?;
    let t = cfg.window_samples(rec.sampling_rate);
    let stride = cfg.stride_samples(rec.sampling_rate);
    let n = rec.len();
    if n < t {
        return Err(DataError::Invalid(format!(
            "{}: recording has {n} samples, shorter than the {t}-sample window",
            rec.subject_id
        )));
    }
    let windows = (0..=(n - t) / stride)
        .map(|i| {
            let range = i * stride..i * stride + t;
            Window {
                data: rec.slice(range.clone()),
                label: window_label(&rec.labels[range.clone()], cfg.label_rule),
                sample_range: range,
            }
        })
        .collect();
    Ok(WindowedSequence {
        subject_id: rec.subject_id.clone(),
        windows,
        stride_samples: stride,
        window_samples: t,
        num_samples: n,
    })
}
