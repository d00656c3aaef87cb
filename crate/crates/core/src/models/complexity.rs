//! Analytic parameter, FLOP and memory accounting.

use serde::{Deserialize, Serialize};

use super::{Body, Inter, Model, ModelVariant};
use crate::error::Error;

/// Cost of one layer for a forward pass over a batch of windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub params: usize,
    /// Multiply-accumulates ×2 plus bias additions.
    pub flops: u64,
    /// Activation scalars kept for the backward pass.
    pub activations: u64,
}

pub fn total_flops(costs: &[LayerCost]) -> u64 {
    costs.iter().map(|c| c.flops).sum()
}

/// Seconds of signal an inter-window model sees per batch: `b·(w − o)`.
pub fn context_length_seconds(batch: usize, window_seconds: f64, overlap_seconds: f64) -> Result<f64, Error> {
    if batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if !(overlap_seconds >= 0.0 && window_seconds > overlap_seconds) {
        return Err(Error::Config(format!(
            "window ({window_seconds} s) must be longer than overlap ({overlap_seconds} s)"
        )));
    }
    Ok(batch as f64 * (window_seconds - overlap_seconds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub variant: ModelVariant,
    pub param_count: usize,
    pub flop_estimate: u64,
    pub memory_estimate_bytes: u64,
    pub batch_size: usize,
    pub context_length_seconds: Option<f64>,
    /// Set when the parameter count is not expected to match published figures.
    pub note: Option<String>,
}

const BYTES_PER_SCALAR: u64 = 4;

impl Model {
    /// Per-layer costs for one forward pass over `batch` windows.
    pub fn layer_costs(&self, batch: usize) -> Vec<LayerCost> {
        let c = &self.config;
        let h = c.lstm_hidden;
        let tout = c.conv_out_time();
        let mut costs = Vec::new();

        let mut t = c.window_samples;
        for (i, params) in self.conv.layer_param_counts().into_iter().enumerate() {
            t = t + 1 - c.kernel;
            let positions = (batch * t * c.sensor_channels) as u64;
            let cin = if i == 0 { 1 } else { c.filters };
            costs.push(LayerCost {
                name: format!("conv.{i}"),
                params,
                flops: positions * (2 * c.kernel * cin * c.filters + c.filters) as u64,
                activations: 2 * positions * c.filters as u64,
            });
        }
        let lstm_acts = |rows: usize, l: usize| (rows * 12 * h * l) as u64;
        let linear_cost = |name: &str, lin: &crate::nn::Linear, rows: usize| LayerCost {
            name: name.to_string(),
            params: lin.param_count(),
            flops: lin.flops(rows),
            activations: (rows * lin.out_dim) as u64,
        };
        match &self.body {
            Body::DeepConvLstm { lstm } => costs.push(LayerCost {
                name: "lstm".into(),
                params: lstm.param_count(),
                flops: lstm.flops(batch * tout),
                activations: lstm_acts(batch * tout, lstm.num_layers()),
            }),
            Body::Shallow { lstm } => costs.push(LayerCost {
                name: "lstm".into(),
                params: lstm.param_count(),
                flops: lstm.flops(batch),
                activations: lstm_acts(batch, lstm.num_layers()),
            }),
            Body::Context {
                intra,
                projection,
                inter,
            } => {
                costs.push(LayerCost {
                    name: "intra_lstm".into(),
                    params: intra.param_count(),
                    flops: intra.flops(batch * tout),
                    activations: lstm_acts(batch * tout, intra.num_layers()),
                });
                costs.push(linear_cost("projection", projection, batch));
                match inter {
                    Inter::Lstm(l) => costs.push(LayerCost {
                        name: "inter_lstm".into(),
                        params: l.param_count(),
                        flops: l.flops(batch),
                        activations: lstm_acts(batch, l.num_layers()),
                    }),
                    Inter::BiLstm(l) => costs.push(LayerCost {
                        name: "inter_bilstm".into(),
                        params: l.param_count(),
                        flops: l.flops(batch),
                        activations: 2 * lstm_acts(batch, l.forward.num_layers()),
                    }),
                    Inter::Attention(a) => costs.push(LayerCost {
                        name: "inter_attention".into(),
                        params: a.param_count(),
                        flops: a.flops(batch),
                        activations: (5 * batch * h + 2 * a.heads * batch * batch) as u64,
                    }),
                    Inter::Transformer(blocks) => {
                        for (i, b) in blocks.iter().enumerate() {
                            let attn = (5 * batch * h + 2 * b.attention.heads * batch * batch) as u64;
                            let mlp = (batch * (2 * b.fc1.out_dim + 5 * h)) as u64;
                            costs.push(LayerCost {
                                name: format!("inter_transformer.{i}"),
                                params: b.param_count(),
                                flops: b.flops(batch),
                                activations: attn + mlp,
                            });
                        }
                    }
                }
            }
        }
        costs.push(linear_cost("classifier", &self.classifier, batch));
        costs
    }

    /// Analytic FLOPs for one forward pass over `batch` windows.
    pub fn estimate_flops(&self, batch: usize) -> u64 {
        total_flops(&self.layer_costs(batch))
    }

    /// Training-time footprint: parameters with gradients and both Adam
    /// moments, plus stored activations, at 4 bytes per scalar.
    pub fn estimate_memory_bytes(&self, batch: usize) -> u64 {
        let acts: u64 = self.layer_costs(batch).iter().map(|c| c.activations).sum();
        BYTES_PER_SCALAR * (4 * self.count_params() as u64 + acts)
    }

    pub fn complexity(&self, batch: usize, window: Option<(f64, f64)>) -> Result<ComplexityReport, Error> {
        let context = match window {
            Some((w, o)) if self.config.variant.uses_inter_window_context() => Some(context_length_seconds(batch, w, o)?),
            Some((w, o)) => {
                context_length_seconds(1, w, o)?;
                Some(w)
            }
            None => None,
        };
        let note = matches!(
            self.config.variant,
            ModelVariant::DeepConvContext(super::InterModule::CausalTransformer | super::InterModule::BiTransformer)
        )
        .then(|| "not reconciled: transformer widths are unpublished; count is for pre-norm blocks with MLP ratio 4".to_string());
        Ok(ComplexityReport {
            variant: self.config.variant,
            param_count: self.count_params(),
            flop_estimate: self.estimate_flops(batch),
            memory_estimate_bytes: self.estimate_memory_bytes(batch),
            batch_size: batch,
            context_length_seconds: context,
            note,
        })
    }
}
