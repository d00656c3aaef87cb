use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, LrSchedule};
use crate::data::{PartialPolicy, WindowConfig};
use crate::error::{DataError, Error};
use crate::metrics::EvalConfig;
use crate::models::{ModelConfig, ModelVariant};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "CONTEXTHAR_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSettings {
    /// Directory of per-subject CSV files (plus optional `labels.json`).
    pub dir: PathBuf,
    pub sampling_rate: f64,
    /// Defaults to the label map size, or the largest label plus one.
    #[serde(default)]
    pub n_classes: Option<usize>,
}

/// Layer hyperparameters; input sizes come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub variant: ModelVariant,
    pub kernel: usize,
    pub conv_layers: usize,
    pub filters: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub dropout: f64,
    pub attn_heads: usize,
    pub transformer_layers: usize,
    pub mlp_ratio: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1, 1, ModelVariant::DeepConvContext(crate::models::InterModule::Lstm));
        Self {
            variant: m.variant,
            kernel: m.kernel,
            conv_layers: m.conv_layers,
            filters: m.filters,
            lstm_hidden: m.lstm_hidden,
            lstm_layers: m.lstm_layers,
            dropout: m.dropout,
            attn_heads: m.attn_heads,
            transformer_layers: m.transformer_layers,
            mlp_ratio: m.mlp_ratio,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self, sensor_channels: usize, n_classes: usize, window_samples: usize) -> ModelConfig {
        ModelConfig {
            sensor_channels,
            n_classes,
            window_samples,
            kernel: self.kernel,
            conv_layers: self.conv_layers,
            filters: self.filters,
            lstm_hidden: self.lstm_hidden,
            lstm_layers: self.lstm_layers,
            dropout: self.dropout,
            attn_heads: self.attn_heads,
            transformer_layers: self.transformer_layers,
            mlp_ratio: self.mlp_ratio,
            variant: self.variant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seeds: Vec<u64>,
    pub partial_batches: PartialPolicy,
    /// Train LOSO folds on separate threads.
    pub parallel_folds: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 100,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            seeds: vec![0, 1, 2],
            partial_batches: PartialPolicy::Keep,
            parallel_folds: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSettings,
    pub window: WindowConfig,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `output_dir`, unless the override environment variable is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Test-time batch: single windows for DeepConvLSTM, the training batch
    /// for models that relate windows to each other.
    pub fn eval_batch(&self) -> usize {
        if self.model.variant.uses_inter_window_context() {
            self.train.batch_size
        } else {
            1
        }
    }

    pub fn window_samples(&self) -> usize {
        self.window.window_samples(self.data.sampling_rate)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let cfg = |m: String| Err(Error::Config(m));
        if !(self.data.sampling_rate > 0.0) {
            return cfg(format!("data.sampling_rate must be positive, got {}", self.data.sampling_rate));
        }
        self.window
            .validate(self.data.sampling_rate)
            .map_err(|e| Error::Config(format!("window: {e}")))?;
        if self.train.epochs == 0 {
            return cfg("train.epochs must be at least 1".into());
        }
        if self.train.batch_size == 0 {
            return cfg("train.batch_size must be at least 1".into());
        }
        if self.train.seeds.is_empty() {
            return cfg("train.seeds must list at least one seed".into());
        }
        let s = &self.train.schedule;
        if !(s.base_lr > 0.0 && s.decay_factor > 0.0) || s.decay_period_epochs == 0 {
            return cfg("train.schedule needs positive base_lr, decay_factor and decay_period_epochs".into());
        }
        if self.train.adam.weight_decay < 0.0 {
            return cfg("train.adam.weight_decay must be non-negative".into());
        }
        // Input sizes are placeholders here; the data fills them in later.
        let mut probe = self.model.model_config(1, 1, self.window_samples());
        probe.n_classes = self.data.n_classes.unwrap_or(1);
        probe.validate()
    }
}
