use rand_chacha::ChaCha8Rng;

use super::{uniform, Graph, ParamId, ParamStore, Res};
use crate::autodiff::Var;

/// Affine map `x·W + b` over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, &[in_dim, out_dim], bound));
        let bias = store.add(format!("{name}.bias"), uniform(rng, &[out_dim], bound));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Res<Var> {
        let w = g.param(self.weight)?;
        let b = g.param(self.bias)?;
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    /// Multiply-adds ×2 plus bias additions for `rows` input vectors.
    pub fn flops(&self, rows: usize) -> u64 {
        (rows * (2 * self.in_dim * self.out_dim + self.out_dim)) as u64
    }
}
