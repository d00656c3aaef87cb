use rand_chacha::ChaCha8Rng;

use super::{Graph, Linear, MultiHeadSelfAttention, ParamId, ParamStore, Res};
use crate::autodiff::Var;
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;

/// Pre-norm transformer block: `x + MHSA(LN(x))`, then `x + MLP(LN(x))`
/// with a GELU MLP of width `dim · mlp_ratio`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln1_gamma: ParamId,
    ln1_beta: ParamId,
    pub attention: MultiHeadSelfAttention,
    ln2_gamma: ParamId,
    ln2_beta: ParamId,
    pub fc1: Linear,
    pub fc2: Linear,
    pub dim: usize,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        causal: bool,
    ) -> Self {
        let ln1_gamma = store.add(format!("{name}.ln1.gamma"), Tensor::full(&[dim], 1.0));
        let ln1_beta = store.add(format!("{name}.ln1.beta"), Tensor::zeros(&[dim]));
        let attention = MultiHeadSelfAttention::new(store, rng, &format!("{name}.attn"), dim, heads, causal);
        let ln2_gamma = store.add(format!("{name}.ln2.gamma"), Tensor::full(&[dim], 1.0));
        let ln2_beta = store.add(format!("{name}.ln2.beta"), Tensor::zeros(&[dim]));
        let fc1 = Linear::new(store, rng, &format!("{name}.mlp.fc1"), dim, dim * mlp_ratio);
        let fc2 = Linear::new(store, rng, &format!("{name}.mlp.fc2"), dim * mlp_ratio, dim);
        Self {
            ln1_gamma,
            ln1_beta,
            attention,
            ln2_gamma,
            ln2_beta,
            fc1,
            fc2,
            dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Res<Var> {
        let (g1, b1) = (g.param(self.ln1_gamma)?, g.param(self.ln1_beta)?);
        let n1 = g.layer_norm(x, g1, b1, LN_EPS)?;
        let a = self.attention.forward(g, n1)?;
        let x = g.add(x, a)?;
        let (g2, b2) = (g.param(self.ln2_gamma)?, g.param(self.ln2_beta)?);
        let n2 = g.layer_norm(x, g2, b2, LN_EPS)?;
        let h = self.fc1.forward(g, n2)?;
        let h = g.gelu(h)?;
        let h = self.fc2.forward(g, h)?;
        g.add(x, h)
    }

    pub fn param_count(&self) -> usize {
        4 * self.dim + self.attention.param_count() + self.fc1.param_count() + self.fc2.param_count()
    }

    pub fn flops(&self, seq: usize) -> u64 {
        self.attention.flops(seq) + self.fc1.flops(seq) + self.fc2.flops(seq)
    }
}

/// Fixed sinusoidal position table `[positions, dim]`:
/// `PE[p, 2i] = sin(p / 10000^(2i/dim))`, `PE[p, 2i+1] = cos(...)`.
pub fn sinusoidal_encoding(positions: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; positions * dim];
    for p in 0..positions {
        for i in 0..dim {
            let pair = (i / 2) * 2;
            let angle = p as f64 / 10_000f64.powf(pair as f64 / dim as f64);
            data[p * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![positions, dim], data).expect("shape")
}
