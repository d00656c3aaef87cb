//! DeepConvLSTM, Shallow DeepConvLSTM and the DeepConvContext family.
//!
//! All variants consume a batch of time-ordered windows `[B, T, C]` and emit
//! per-window logits `[B, n_classes]`. DeepConvLSTM classifies each window on
//! its own; the other variants relate the windows of a batch to each other.

mod checkpoint;
mod complexity;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use complexity::{context_length_seconds, ComplexityReport, LayerCost};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, TensorError};
use crate::nn::{
    sinusoidal_encoding, BiLstm, ConvBlock, Graph, Linear, Lstm, MultiHeadSelfAttention, ParamStore, TransformerBlock,
};
use crate::tensor::Tensor;

type Res<T> = std::result::Result<T, TensorError>;

/// Module relating window embeddings across the batch in DeepConvContext.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InterModule {
    Lstm,
    BiLstm,
    CausalAttention,
    BiAttention,
    CausalTransformer,
    BiTransformer,
}

impl InterModule {
    pub const ALL: [InterModule; 6] = [
        InterModule::Lstm,
        InterModule::BiLstm,
        InterModule::CausalAttention,
        InterModule::BiAttention,
        InterModule::CausalTransformer,
        InterModule::BiTransformer,
    ];

    pub fn is_bidirectional(self) -> bool {
        matches!(self, InterModule::BiLstm | InterModule::BiAttention | InterModule::BiTransformer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelVariant {
    DeepConvLstm,
    ShallowDeepConvLstm,
    DeepConvContext(InterModule),
}

impl ModelVariant {
    /// Every architecture, in the order complexity tables list them.
    pub fn all() -> Vec<ModelVariant> {
        let mut v = vec![ModelVariant::DeepConvLstm, ModelVariant::ShallowDeepConvLstm];
        v.extend(InterModule::ALL.iter().map(|&m| ModelVariant::DeepConvContext(m)));
        v
    }

    /// Whether predictions for a window depend on other windows in its batch.
    pub fn uses_inter_window_context(self) -> bool {
        !matches!(self, ModelVariant::DeepConvLstm)
    }

    pub fn is_bidirectional(self) -> bool {
        matches!(self, ModelVariant::DeepConvContext(m) if m.is_bidirectional())
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::DeepConvLstm => "deepconvlstm",
            ModelVariant::ShallowDeepConvLstm => "shallow-deepconvlstm",
            ModelVariant::DeepConvContext(m) => match m {
                InterModule::Lstm => "dcc-lstm",
                InterModule::BiLstm => "dcc-bilstm",
                InterModule::CausalAttention => "dcc-attention",
                InterModule::BiAttention => "dcc-biattention",
                InterModule::CausalTransformer => "dcc-transformer",
                InterModule::BiTransformer => "dcc-bitransformer",
            },
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        Self::all()
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::all().iter().map(|v| v.name()).collect();
                format!("unknown model variant {s:?} (expected one of {})", names.join(", "))
            })
    }
}

impl TryFrom<String> for ModelVariant {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModelVariant> for String {
    fn from(v: ModelVariant) -> String {
        v.name().to_string()
    }
}

fn d_kernel() -> usize {
    9
}
fn d_conv_layers() -> usize {
    4
}
fn d_filters() -> usize {
    64
}
fn d_hidden() -> usize {
    128
}
fn d_one() -> usize {
    1
}
fn d_dropout() -> f64 {
    0.5
}
fn d_heads() -> usize {
    4
}
fn d_tlayers() -> usize {
    3
}
fn d_mlp_ratio() -> usize {
    4
}

/// Full hyperparameter record for one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub sensor_channels: usize,
    pub n_classes: usize,
    pub window_samples: usize,
    #[serde(default = "d_kernel")]
    pub kernel: usize,
    #[serde(default = "d_conv_layers")]
    pub conv_layers: usize,
    #[serde(default = "d_filters")]
    pub filters: usize,
    #[serde(default = "d_hidden")]
    pub lstm_hidden: usize,
    #[serde(default = "d_one")]
    pub lstm_layers: usize,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    #[serde(default = "d_heads")]
    pub attn_heads: usize,
    #[serde(default = "d_tlayers")]
    pub transformer_layers: usize,
    #[serde(default = "d_mlp_ratio")]
    pub mlp_ratio: usize,
    pub variant: ModelVariant,
}

impl ModelConfig {
    /// Layer hyperparameters at their published defaults.
    pub fn new(sensor_channels: usize, n_classes: usize, window_samples: usize, variant: ModelVariant) -> Self {
        Self {
            sensor_channels,
            n_classes,
            window_samples,
            kernel: d_kernel(),
            conv_layers: d_conv_layers(),
            filters: d_filters(),
            lstm_hidden: d_hidden(),
            lstm_layers: d_one(),
            dropout: d_dropout(),
            attn_heads: d_heads(),
            transformer_layers: d_tlayers(),
            mlp_ratio: d_mlp_ratio(),
            variant,
        }
    }

    /// Three sensor axes, six classes, 50-sample windows.
    pub fn reference(variant: ModelVariant) -> Self {
        Self::new(3, 6, 50, variant)
    }

    pub fn with_variant(&self, variant: ModelVariant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    /// Conv output steps per window.
    pub fn conv_out_time(&self) -> usize {
        self.window_samples - self.conv_layers * (self.kernel - 1)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("sensor_channels", self.sensor_channels),
            ("n_classes", self.n_classes),
            ("window_samples", self.window_samples),
            ("kernel", self.kernel),
            ("conv_layers", self.conv_layers),
            ("filters", self.filters),
            ("lstm_hidden", self.lstm_hidden),
            ("attn_heads", self.attn_heads),
            ("transformer_layers", self.transformer_layers),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if !(1..=2).contains(&self.lstm_layers) {
            return Err(Error::Config(format!("model.lstm_layers must be 1 or 2, got {}", self.lstm_layers)));
        }
        if self.window_samples <= self.conv_layers * (self.kernel - 1) {
            return Err(Error::Config(format!(
                "window of {} samples too short for {} conv layers of kernel {} (min {})",
                self.window_samples,
                self.conv_layers,
                self.kernel,
                self.conv_layers * (self.kernel - 1) + 1
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("model.dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.lstm_hidden % self.attn_heads != 0 {
            return Err(Error::Config(format!(
                "model.lstm_hidden ({}) must be divisible by attn_heads ({})",
                self.lstm_hidden, self.attn_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Inter {
    Lstm(Lstm),
    BiLstm(BiLstm),
    Attention(MultiHeadSelfAttention),
    Transformer(Vec<TransformerBlock>),
}

#[derive(Debug, Clone)]
enum Body {
    DeepConvLstm { lstm: Lstm },
    Shallow { lstm: Lstm },
    Context { intra: Lstm, projection: Linear, inter: Inter },
}

/// A built network: configuration, parameters and layer wiring.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    conv: ConvBlock,
    body: Body,
    classifier: Linear,
}

impl Model {
    /// Builds the architecture with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let h = c.lstm_hidden;
        let conv = ConvBlock::new(&mut store, &mut rng, "conv", c.conv_layers, c.filters, c.kernel);
        let feat = c.filters * c.sensor_channels;
        let (body, cls_in) = match c.variant {
            ModelVariant::DeepConvLstm => (
                Body::DeepConvLstm {
                    lstm: Lstm::new(&mut store, &mut rng, "lstm", feat, h, c.lstm_layers),
                },
                h,
            ),
            ModelVariant::ShallowDeepConvLstm => (
                Body::Shallow {
                    lstm: Lstm::new(&mut store, &mut rng, "lstm", feat, h, c.lstm_layers),
                },
                h,
            ),
            ModelVariant::DeepConvContext(kind) => {
                let intra = Lstm::new(&mut store, &mut rng, "intra_lstm", feat, h, c.lstm_layers);
                let projection = Linear::new(&mut store, &mut rng, "projection", c.conv_out_time() * h, h);
                let (inter, width) = match kind {
                    InterModule::Lstm => (
                        Inter::Lstm(Lstm::new(&mut store, &mut rng, "inter_lstm", h, h, c.lstm_layers)),
                        h,
                    ),
                    InterModule::BiLstm => (
                        Inter::BiLstm(BiLstm::new(&mut store, &mut rng, "inter_bilstm", h, h, c.lstm_layers)),
                        2 * h,
                    ),
                    InterModule::CausalAttention | InterModule::BiAttention => (
                        Inter::Attention(MultiHeadSelfAttention::new(
                            &mut store,
                            &mut rng,
                            "inter_attn",
                            h,
                            c.attn_heads,
                            kind == InterModule::CausalAttention,
                        )),
                        h,
                    ),
                    InterModule::CausalTransformer | InterModule::BiTransformer => (
                        Inter::Transformer(
                            (0..c.transformer_layers)
                                .map(|i| {
                                    TransformerBlock::new(
                                        &mut store,
                                        &mut rng,
                                        &format!("inter_tf.{i}"),
                                        h,
                                        c.attn_heads,
                                        c.mlp_ratio,
                                        kind == InterModule::CausalTransformer,
                                    )
                                })
                                .collect(),
                        ),
                        h,
                    ),
                };
                (
                    Body::Context {
                        intra,
                        projection,
                        inter,
                    },
                    width,
                )
            }
        };
        let classifier = Linear::new(&mut store, &mut rng, "classifier", cls_in, c.n_classes);
        Ok(Self {
            config,
            store,
            conv,
            body,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn classifier_input_width(&self) -> usize {
        self.classifier.in_dim
    }

    /// Logits `[B, n_classes]` for windows `x: [B, T, C]` recorded on `g`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Res<Var> {
        let shape = g.shape(x).to_vec();
        let c = &self.config;
        if shape.len() != 3 || shape[1] != c.window_samples || shape[2] != c.sensor_channels {
            return Err(TensorError::ShapeMismatch {
                op: "model",
                lhs: shape,
                rhs: vec![c.window_samples, c.sensor_channels],
            });
        }
        let b = shape[0];
        let h = c.lstm_hidden;
        let feats = self.conv.forward(g, x)?;
        let tout = g.shape(feats)[1];
        let feat = g.shape(feats)[2];
        let emb = match &self.body {
            Body::DeepConvLstm { lstm } => {
                let (_, state) = lstm.forward(g, feats, None, false)?;
                *state.h.last().expect("at least one layer")
            }
            Body::Shallow { lstm } => {
                let last = g.slice(feats, 1, tout - 1, 1)?;
                let seq = g.reshape(last, &[1, b, feat])?;
                let (out, _) = lstm.forward(g, seq, None, false)?;
                g.reshape(out, &[b, h])?
            }
            Body::Context {
                intra,
                projection,
                inter,
            } => {
                let (seq, _) = intra.forward(g, feats, None, false)?;
                let flat = g.reshape(seq, &[b, tout * h])?;
                let windows = projection.forward(g, flat)?;
                match inter {
                    Inter::Lstm(l) => {
                        let s = g.reshape(windows, &[1, b, h])?;
                        let (out, _) = l.forward(g, s, None, false)?;
                        g.reshape(out, &[b, h])?
                    }
                    Inter::BiLstm(l) => {
                        let s = g.reshape(windows, &[1, b, h])?;
                        let out = l.forward(g, s)?;
                        g.reshape(out, &[b, 2 * h])?
                    }
                    Inter::Attention(a) => {
                        let pe = g.constant(sinusoidal_encoding(b, h))?;
                        let z = g.add(windows, pe)?;
                        a.forward(g, z)?
                    }
                    Inter::Transformer(blocks) => {
                        let pe = g.constant(sinusoidal_encoding(b, h))?;
                        let mut z = g.add(windows, pe)?;
                        for blk in blocks {
                            z = blk.forward(g, z)?;
                        }
                        z
                    }
                }
            }
        };
        let emb = g.dropout(emb, c.dropout)?;
        self.classifier.forward(g, emb)
    }

    /// Evaluation-mode logits for a batch `[B, T, C]`.
    pub fn logits(&self, x: &Tensor) -> Res<Tensor> {
        let mut g = Graph::eval(&self.store);
        let xv = g.constant(x.clone())?;
        let y = self.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }

    /// Evaluation-mode class probabilities for a batch `[B, T, C]`.
    pub fn predict_proba(&self, x: &Tensor) -> Res<Tensor> {
        let mut g = Graph::eval(&self.store);
        let xv = g.constant(x.clone())?;
        let y = self.forward(&mut g, xv)?;
        let p = g.softmax(y)?;
        Ok(g.value(p).clone())
    }

    /// Number of learnable scalars.
    pub fn count_params(&self) -> usize {
        self.store.scalar_count()
    }
}
