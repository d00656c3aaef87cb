use rand_chacha::ChaCha8Rng;

use super::{uniform, Graph, ParamId, ParamStore, Res};
use crate::autodiff::Var;
use crate::error::TensorError;

#[derive(Debug, Clone)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
    in_channels: usize,
}

/// Stack of valid `kernel × 1` convolutions over time, each followed by ReLU.
///
/// Sensor axes are convolved independently with shared filters. Input is
/// `[B, T, S]`, output is `[B, T', S·filters]` with
/// `T' = T − num_layers·(kernel − 1)`; feature index is `s·filters + f`.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    layers: Vec<ConvLayer>,
    pub kernel: usize,
    pub filters: usize,
}

impl ConvBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        num_layers: usize,
        filters: usize,
        kernel: usize,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|i| {
                let cin = if i == 0 { 1 } else { filters };
                let bound = 1.0 / ((kernel * cin) as f64).sqrt();
                ConvLayer {
                    weight: store.add(
                        format!("{name}.{i}.weight"),
                        uniform(rng, &[kernel * cin, filters], bound),
                    ),
                    bias: store.add(format!("{name}.{i}.bias"), uniform(rng, &[filters], bound)),
                    in_channels: cin,
                }
            })
            .collect();
        Self {
            layers,
            kernel,
            filters,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Smallest window length that leaves at least one output step.
    pub fn min_time(&self) -> usize {
        self.layers.len() * (self.kernel - 1) + 1
    }

    pub fn out_time(&self, time: usize) -> Option<usize> {
        (time >= self.min_time()).then(|| time - self.layers.len() * (self.kernel - 1))
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Res<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(TensorError::Invalid {
                op: "conv_block",
                msg: format!("expected [batch, time, sensors], got {shape:?}"),
            });
        }
        let (b, t, s) = (shape[0], shape[1], shape[2]);
        if t < self.min_time() {
            return Err(TensorError::Invalid {
                op: "conv_block",
                msg: format!("window too short (min {})", self.min_time()),
            });
        }
        let mut h = g.reshape(x, &[b, t, s, 1])?;
        for layer in &self.layers {
            let w = g.param(layer.weight)?;
            let bias = g.param(layer.bias)?;
            h = g.conv_time(h, w, bias, self.kernel)?;
            h = g.relu(h)?;
        }
        let tout = g.shape(h)[1];
        g.reshape(h, &[b, tout, s * self.filters])
    }

    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| self.kernel * l.in_channels * self.filters + self.filters)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_param_counts().iter().sum()
    }

    /// FLOPs for `windows` windows of `time` samples over `sensors` axes.
    pub fn flops(&self, windows: usize, time: usize, sensors: usize) -> u64 {
        let mut t = time;
        let mut total = 0u64;
        for l in &self.layers {
            t = t + 1 - self.kernel;
            let positions = (windows * t * sensors) as u64;
            total += positions * (2 * self.kernel * l.in_channels * self.filters + self.filters) as u64;
        }
        total
    }
}
