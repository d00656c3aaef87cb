//! Synthetic recordings: a per-sample Markov chain over classes, each class
//! rendered as per-channel offset + sinusoid + Gaussian noise.

use std::f64::consts::PI;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::RawRecording;
use crate::error::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    pub offset: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub frequency_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub n_classes: usize,
    pub n_channels: usize,
    pub sampling_rate: f64,
    pub samples_per_subject: usize,
    /// Row-stochastic per-sample transition matrix `[n_classes][n_classes]`.
    pub transitions: Vec<Vec<f64>>,
    pub signatures: Vec<ClassSignature>,
    pub noise_std: f64,
    /// `(class, source)`: `class` is rendered with `source`'s signature, so
    /// only the surrounding activity sequence tells the two apart.
    pub context_rule: Option<(usize, usize)>,
    pub seed: u64,
}

/// Per-sample chain that leaves class `i` with probability
/// `1 / (mean_segment_seconds[i] · rate)` and then jumps by `jump`.
pub fn segment_chain(jump: &[Vec<f64>], mean_segment_seconds: &[f64], rate: f64) -> Vec<Vec<f64>> {
    jump.iter()
        .enumerate()
        .map(|(i, row)| {
            let q = (1.0 / (mean_segment_seconds[i] * rate)).min(1.0);
            row.iter()
                .enumerate()
                .map(|(j, &p)| q * p + if i == j { 1.0 - q } else { 0.0 })
                .collect()
        })
        .collect()
}

fn random_signatures(rng: &mut ChaCha8Rng, n_classes: usize, n_channels: usize) -> Vec<ClassSignature> {
    (0..n_classes)
        .map(|c| ClassSignature {
            offset: (0..n_channels).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            amplitude: (0..n_channels).map(|_| rng.gen_range(0.5..1.5)).collect(),
            frequency_hz: 0.5 + 0.7 * c as f64,
        })
        .collect()
}

impl SynthSpec {
    /// Distinct signatures for every class; segments average 10 s and jump
    /// uniformly to any other class.
    pub fn separable(n_subjects: usize, n_classes: usize, rate: f64, seconds: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5167_7A7E);
        let off = 1.0 / (n_classes.max(2) - 1) as f64;
        let jump: Vec<Vec<f64>> = (0..n_classes)
            .map(|i| (0..n_classes).map(|j| if i == j { 0.0 } else { off }).collect())
            .collect();
        Self {
            n_subjects,
            n_classes,
            n_channels: 3,
            sampling_rate: rate,
            samples_per_subject: (seconds * rate).round() as usize,
            transitions: segment_chain(&jump, &vec![10.0; n_classes], rate),
            signatures: random_signatures(&mut rng, n_classes, 3),
            noise_std: 0.3,
            context_rule: None,
            seed,
        }
    }

    /// Four classes A, B, X, Y where Y copies X's signature. X always follows
    /// A and Y always follows B; X and Y return to A or B with equal odds.
    /// A and B last `mean_segment_seconds` on average, X and Y half that, so
    /// the disambiguating activity is usually a few windows back.
    pub fn context(n_subjects: usize, rate: f64, seconds: f64, mean_segment_seconds: f64, seed: u64) -> Self {
        let mut spec = Self::separable(n_subjects, 4, rate, seconds, seed);
        let jump = vec![
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.5, 0.5, 0.0, 0.0],
        ];
        let m = mean_segment_seconds;
        spec.transitions = segment_chain(&jump, &[m, m, m / 2.0, m / 2.0], rate);
        spec.context_rule = Some((3, 2));
        spec
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.n_classes;
        let bad = |msg: String| Err(DataError::Invalid(format!("synthetic spec: {msg}")));
        if n == 0 || self.n_channels == 0 || self.n_subjects == 0 {
            return bad("need at least one class, channel and subject".into());
        }
        if !(self.sampling_rate > 0.0) || !(self.noise_std >= 0.0) {
            return bad("sampling rate must be positive and noise non-negative".into());
        }
        if self.transitions.len() != n {
            return bad(format!("transition matrix has {} rows for {n} classes", self.transitions.len()));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.len() != n || row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return bad(format!("row {i} of the transition matrix is not a probability vector"));
            }
        }
        if self.signatures.len() != n
            || self
                .signatures
                .iter()
                .any(|s| s.offset.len() != self.n_channels || s.amplitude.len() != self.n_channels)
        {
            return bad(format!("need one {}-channel signature per class", self.n_channels));
        }
        if let Some((a, b)) = self.context_rule {
            if a >= n || b >= n || a == b {
                return bad(format!("context rule ({a}, {b}) must name two distinct classes"));
            }
        }
        Ok(())
    }
}

/// Generates `n_subjects` recordings, reproducible from `spec.seed`.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<RawRecording>, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rows: Vec<WeightedIndex<f64>> = spec
        .transitions
        .iter()
        .map(|r| WeightedIndex::new(r).expect("validated row"))
        .collect();
    let noise = Normal::new(0.0, spec.noise_std).expect("validated noise");
    let rendered = |c: usize| match spec.context_rule {
        Some((class, source)) if class == c => source,
        _ => c,
    };
    let names: Vec<String> = (0..spec.n_channels).map(|c| format!("ch{c}")).collect();
    let width = spec.n_subjects.to_string().len().max(2);
    (0..spec.n_subjects)
        .map(|s| {
            let n = spec.samples_per_subject;
            let mut labels = Vec::with_capacity(n);
            let mut state = rng.gen_range(0..spec.n_classes);
            for _ in 0..n {
                labels.push(state);
                state = rows[state].sample(&mut rng);
            }
            let mut channels = vec![Vec::with_capacity(n); spec.n_channels];
            for (t, &l) in labels.iter().enumerate() {
                let sig = &spec.signatures[rendered(l)];
                let phase = 2.0 * PI * sig.frequency_hz * t as f64 / spec.sampling_rate;
                for (ch, out) in channels.iter_mut().enumerate() {
                    let v = sig.offset[ch] + sig.amplitude[ch] * (phase + ch as f64 * PI / 3.0).sin();
                    out.push(v + noise.sample(&mut rng));
                }
            }
            RawRecording::new(
                format!("s{:0width$}", s + 1),
                spec.sampling_rate,
                names.clone(),
                channels,
                labels,
            )
        })
        .collect()
}
