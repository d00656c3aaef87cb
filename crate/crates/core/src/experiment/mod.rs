//! Training and evaluation protocol: weighted cross-entropy, Adam with step
//! decay on time-ordered batches, leave-one-subject-out folds over seeds,
//! batch-size sweeps and complexity tables.

mod config;

pub use config::{DataSettings, ExperimentConfig, ModelSettings, TrainSettings, OUTPUT_DIR_ENV};

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::AdamState;
use crate::data::{
    class_weights, load_csv_with_labels, load_label_map, loso_splits, make_batches, sliding_window, LabelMap,
    Normalizer, PartialPolicy, RawRecording, WindowedSequence, LABEL_MAP_FILE,
};
use crate::error::{DataError, Error, Result, TensorError};
use crate::metrics::{
    aggregate_seeds, evaluate_subject, unwindow, write_confusion_csv, MetricsReport, SubjectMetrics, WindowPrediction,
};
use crate::models::{context_length_seconds, ComplexityReport, Model, ModelConfig, ModelVariant};
use crate::nn::Graph;
use crate::tensor::Tensor;

/// Recordings plus the class count they are scored against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub recordings: Vec<RawRecording>,
    pub n_classes: usize,
    pub label_map: Option<LabelMap>,
}

impl Dataset {
    /// Infers the class count from the largest label when `n_classes` is `None`.
    pub fn new(recordings: Vec<RawRecording>, n_classes: Option<usize>) -> Result<Self> {
        let max_label = recordings.iter().flat_map(|r| r.labels.iter()).max().copied();
        let n_classes = n_classes.unwrap_or(max_label.map_or(0, |m| m + 1));
        let ds = Self {
            recordings,
            n_classes,
            label_map: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let Some(first) = self.recordings.first() else {
            return Err(DataError::Invalid("dataset holds no recordings".into()).into());
        };
        for r in &self.recordings {
            if r.num_channels() != first.num_channels() || r.sampling_rate != first.sampling_rate {
                return Err(DataError::Invalid(format!(
                    "{}: {} channels at {} Hz, but {} has {} at {} Hz",
                    r.subject_id,
                    r.num_channels(),
                    r.sampling_rate,
                    first.subject_id,
                    first.num_channels(),
                    first.sampling_rate
                ))
                .into());
            }
            if let Some(&l) = r.labels.iter().find(|&&l| l >= self.n_classes) {
                return Err(DataError::Invalid(format!(
                    "{}: label {l} out of range for {} classes",
                    r.subject_id, self.n_classes
                ))
                .into());
            }
        }
        Ok(())
    }

    pub fn sensor_channels(&self) -> usize {
        self.recordings[0].num_channels()
    }

    pub fn subset(&self, ids: &[String]) -> Vec<&RawRecording> {
        ids.iter()
            .filter_map(|id| self.recordings.iter().find(|r| &r.subject_id == id))
            .collect()
    }
}

/// Loads every `*.csv` in `data.dir` in file-name order.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = &cfg.data.dir;
    let entries = fs::read_dir(dir).map_err(|source| DataError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(DataError::Invalid(format!("no .csv recordings in {}", dir.display())).into());
    }
    let map_path = dir.join(LABEL_MAP_FILE);
    let label_map = if map_path.exists() {
        Some(load_label_map(&map_path)?)
    } else {
        None
    };
    let recordings = paths
        .iter()
        .map(|p| load_csv_with_labels(p, cfg.data.sampling_rate, label_map.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let n_classes = cfg
        .data
        .n_classes
        .or_else(|| label_map.as_ref().and_then(|m| m.values().max().map(|v| v + 1)));
    let mut ds = Dataset::new(recordings, n_classes)?;
    ds.label_map = label_map;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean weighted cross-entropy over the epoch's batches.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub normalizer: Normalizer,
    pub epochs: Vec<EpochLog>,
}

/// FNV-1a over `tag`, folded into `seed`: independent streams per fold.
fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

fn window_all(recs: &[RawRecording], cfg: &ExperimentConfig) -> Result<Vec<WindowedSequence>> {
    Ok(recs
        .iter()
        .map(|r| sliding_window(r, &cfg.window))
        .collect::<Result<Vec<_>, _>>()?)
}

/// Model hyperparameters for a dataset under `cfg`.
pub fn model_config_for(cfg: &ExperimentConfig, sensor_channels: usize, n_classes: usize) -> ModelConfig {
    cfg.model.model_config(sensor_channels, n_classes, cfg.window_samples())
}

/// Trains one model on `train` recordings. `seed` fixes initialization;
/// dropout masks come from a stream derived from `seed` and `tag`.
pub fn train_model(
    cfg: &ExperimentConfig,
    n_classes: usize,
    train: &[&RawRecording],
    seed: u64,
    tag: &str,
) -> Result<TrainedModel> {
    let normalizer = Normalizer::fit(train.iter().copied())?;
    let normalized: Vec<RawRecording> = train.iter().map(|r| normalizer.apply(r)).collect();
    let seqs = window_all(&normalized, cfg)?;
    let batches = make_batches(&seqs, cfg.train.batch_size, cfg.train.partial_batches)?;
    if batches.is_empty() {
        return Err(DataError::Invalid("no training batches (every batch was partial and dropped)".into()).into());
    }
    let labels: Vec<usize> = seqs.iter().flat_map(|s| s.labels()).collect();
    let weights = class_weights(&labels, n_classes)?;

    let channels = train[0].num_channels();
    let mut model = Model::new(model_config_for(cfg, channels, n_classes), seed)?;
    let mut adam = AdamState::new(cfg.train.adam, &model.params().values());
    let dropout_seed = derive_seed(seed, tag);
    let mut epochs = Vec::with_capacity(cfg.train.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.train.epochs {
        let lr = cfg.train.schedule.lr_at_epoch(epoch);
        let mut total = 0.0;
        for batch in &batches {
            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            rng.set_stream(step);
            step += 1;
            let diverged = || Error::Divergence {
                seed,
                fold: tag.to_string(),
                epoch,
            };
            let pass = || -> Result<(Vec<Tensor>, f64), TensorError> {
                let mut g = Graph::train(model.params(), rng);
                let x = g.constant(batch.inputs(&seqs))?;
                let logits = model.forward(&mut g, x)?;
                let loss = g.weighted_cross_entropy(logits, &batch.labels(&seqs), &weights)?;
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(TensorError::NonFinite { op: "loss" });
                }
                let grads = g.backward(loss)?;
                Ok((g.param_grads(&grads), value))
            };
            let (grads, loss) = pass().map_err(|e| match e {
                TensorError::NonFinite { .. } => diverged(),
                other => other.into(),
            })?;
            let mut values = model.params().values();
            adam.step(&mut values, &grads, lr)?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(diverged());
            }
            model.params_mut().set_values(values)?;
            total += loss;
        }
        let loss = total / batches.len() as f64;
        log::debug!("{tag} seed {seed} epoch {epoch}: lr {lr:.3e} loss {loss:.5}");
        epochs.push(EpochLog { epoch, lr, loss });
    }
    Ok(TrainedModel {
        model,
        normalizer,
        epochs,
    })
}

/// Test-time batch size: single windows for DeepConvLSTM, `train_batch` for
/// models that relate windows to each other.
pub fn eval_batch_for(variant: ModelVariant, train_batch: usize) -> usize {
    if variant.uses_inter_window_context() {
        train_batch
    } else {
        1
    }
}

/// Class probabilities for every window of `seq`, in batches of `batch`.
pub fn predict_windows(model: &Model, seq: &WindowedSequence, batch: usize) -> Result<Vec<WindowPrediction>> {
    let seqs = std::slice::from_ref(seq);
    let mut out = Vec::with_capacity(seq.windows.len());
    for b in make_batches(seqs, batch, PartialPolicy::Keep)? {
        let probs = model.predict_proba(&b.inputs(seqs))?;
        let argmax = probs.argmax_rows();
        for (i, w) in b.windows.clone().enumerate() {
            out.push(WindowPrediction {
                sample_range: seq.windows[w].sample_range.clone(),
                class: argmax[i],
                probs: probs.row(i).to_vec(),
            });
        }
    }
    Ok(out)
}

/// Scores a trained model on one raw recording.
pub fn evaluate_recording(
    trained: &TrainedModel,
    rec: &RawRecording,
    cfg: &ExperimentConfig,
    n_classes: usize,
) -> Result<SubjectMetrics> {
    let normalized = trained.normalizer.apply(rec);
    let seq = sliding_window(&normalized, &cfg.window)?;
    let batch = eval_batch_for(trained.model.config().variant, cfg.train.batch_size);
    let preds = predict_windows(&trained.model, &seq, batch)?;
    let per_sample = unwindow(&preds, rec.len(), n_classes, cfg.eval.overlap_rule)?;
    Ok(evaluate_subject(&rec.subject_id, &rec.labels, &per_sample, &cfg.eval)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub held_out_subject: String,
    pub epochs: Vec<EpochLog>,
    pub metrics: SubjectMetrics,
    pub wall_clock_seconds: f64,
    pub complexity: ComplexityReport,
}

#[derive(Debug, Clone)]
pub struct LosoOutcome {
    pub report: MetricsReport,
    pub runs: Vec<RunRecord>,
}

fn run_fold(cfg: &ExperimentConfig, ds: &Dataset, seed: u64, held_out: &str, train_ids: &[String]) -> Result<RunRecord> {
    let start = Instant::now();
    let train = ds.subset(train_ids);
    let test = ds
        .recordings
        .iter()
        .find(|r| r.subject_id == held_out)
        .expect("split names a loaded subject");
    let trained = train_model(cfg, ds.n_classes, &train, seed, held_out)?;
    let metrics = evaluate_recording(&trained, test, cfg, ds.n_classes)?;
    log::info!(
        "seed {seed} fold {held_out}: macro-F1 {:.4} mAP {:?}",
        metrics.macro_f1,
        metrics.map
    );
    let batch = cfg.train.batch_size;
    let window = (cfg.window.window_seconds, cfg.window.overlap_seconds);
    Ok(RunRecord {
        config: cfg.clone(),
        seed,
        held_out_subject: held_out.to_string(),
        epochs: trained.epochs,
        metrics,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        complexity: trained.model.complexity(batch, Some(window))?,
    })
}

/// Every seed × held-out subject, aggregated over subjects then seeds.
pub fn run_loso(cfg: &ExperimentConfig, ds: &Dataset) -> Result<LosoOutcome> {
    cfg.validate()?;
    let splits = loso_splits(&ds.recordings)?;
    let jobs: Vec<(u64, &crate::data::LosoSplit)> = cfg
        .train
        .seeds
        .iter()
        .flat_map(|&s| splits.iter().map(move |sp| (s, sp)))
        .collect();
    let run = |(seed, split): &(u64, &crate::data::LosoSplit)| {
        run_fold(cfg, ds, *seed, &split.held_out_subject, &split.train_subjects)
    };
    let results: Vec<Result<RunRecord>> = if cfg.train.parallel_folds {
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        let mut out = Vec::with_capacity(jobs.len());
        for chunk in jobs.chunks(threads) {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|j| s.spawn(move || run(j))).collect();
                out.extend(handles.into_iter().map(|h| h.join().expect("fold thread panicked")));
            });
        }
        out
    } else {
        jobs.iter().map(run).collect()
    };
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;

    let per_seed = cfg
        .train
        .seeds
        .iter()
        .map(|&seed| {
            let subjects = runs.iter().filter(|r| r.seed == seed).map(|r| r.metrics.clone()).collect();
            (seed, subjects)
        })
        .collect();
    Ok(LosoOutcome {
        report: aggregate_seeds(per_seed, ds.n_classes, &cfg.eval),
        runs,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

/// Writes `metrics.json` (deterministic), `confusion.csv`, `losses.csv`
/// (epoch, fold, seed, loss) and `runs.json` (includes wall-clock times).
pub fn write_loso_outputs(outcome: &LosoOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_file(&dir.join("metrics.json"), serde_json::to_string_pretty(&outcome.report)?)?;
    write_confusion_csv(&outcome.report.confusion, &dir.join("confusion.csv"))?;
    let mut losses = String::from("epoch,fold,seed,loss\n");
    for r in &outcome.runs {
        for e in &r.epochs {
            losses.push_str(&format!("{},{},{},{}\n", e.epoch, r.held_out_subject, r.seed, e.loss));
        }
    }
    write_file(&dir.join("losses.csv"), losses)?;
    write_file(&dir.join("runs.json"), serde_json::to_string_pretty(&outcome.runs)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub batch_size: usize,
    pub macro_f1: f64,
    pub map: Option<f64>,
    pub context_length_seconds: f64,
    pub warning: Option<String>,
}

pub const SWEEP_BATCH_SIZES: [usize; 4] = [25, 50, 100, 200];

/// One LOSO run per batch size (train and test batch set together).
pub fn run_batch_sweep(cfg: &ExperimentConfig, ds: &Dataset, sizes: &[usize]) -> Result<Vec<SweepRow>> {
    sizes
        .iter()
        .map(|&b| {
            let mut c = cfg.clone();
            c.train.batch_size = b;
            c.validate()?;
            let warning = (b == 1 && c.model.variant.uses_inter_window_context()).then(|| {
                let msg = "context length = single window".to_string();
                log::warn!("batch size 1 with {}: {msg}", c.model.variant);
                msg
            });
            let context = if c.model.variant.uses_inter_window_context() {
                context_length_seconds(b, c.window.window_seconds, c.window.overlap_seconds)?
            } else {
                c.window.window_seconds
            };
            let out = run_loso(&c, ds)?;
            Ok(SweepRow {
                batch_size: b,
                macro_f1: out.report.macro_f1,
                map: out.report.map,
                context_length_seconds: context,
                warning,
            })
        })
        .collect()
}

/// Parameter, FLOP, memory and context-length figures for every variant
/// under `cfg`'s layer settings.
pub fn complexity_report(
    cfg: &ExperimentConfig,
    sensor_channels: usize,
    n_classes: usize,
) -> Result<Vec<ComplexityReport>> {
    let window = (cfg.window.window_seconds, cfg.window.overlap_seconds);
    ModelVariant::all()
        .into_iter()
        .map(|v| {
            let mut mc = model_config_for(cfg, sensor_channels, n_classes);
            mc.variant = v;
            Model::new(mc, 0)?.complexity(cfg.train.batch_size, Some(window))
        })
        .collect()
}

#[cfg(test)]
mod tests;
