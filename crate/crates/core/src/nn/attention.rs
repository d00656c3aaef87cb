use rand_chacha::ChaCha8Rng;

use super::{Graph, Linear, ParamStore, Res};
use crate::autodiff::Var;
use crate::error::TensorError;

/// Multi-head scaled dot-product self-attention over a `[S, dim]` sequence.
#[derive(Debug, Clone)]
pub struct MultiHeadSelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
    pub causal: bool,
}

impl MultiHeadSelfAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize, heads: usize, causal: bool) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        Self {
            query: Linear::new(store, rng, &format!("{name}.q"), dim, dim),
            key: Linear::new(store, rng, &format!("{name}.k"), dim, dim),
            value: Linear::new(store, rng, &format!("{name}.v"), dim, dim),
            output: Linear::new(store, rng, &format!("{name}.out"), dim, dim),
            heads,
            dim,
            causal,
        }
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn check(&self, g: &Graph, x: Var) -> Res<usize> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.dim || shape[0] == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "mhsa",
                lhs: shape.to_vec(),
                rhs: vec![self.dim],
            });
        }
        Ok(shape[0])
    }

    /// Attention weights `[heads, S, S]` and the per-head values `[heads, S, d_head]`.
    fn weights_and_values(&self, g: &mut Graph, x: Var, seq: usize) -> Res<(Var, Var)> {
        let (h, dh) = (self.heads, self.head_dim());
        let q = self.query.forward(g, x)?;
        let q = g.reshape(q, &[seq, h, dh])?;
        let q = g.permute(q, &[1, 0, 2])?;
        let k = self.key.forward(g, x)?;
        let k = g.reshape(k, &[seq, h, dh])?;
        let kt = g.permute(k, &[1, 2, 0])?;
        let v = self.value.forward(g, x)?;
        let v = g.reshape(v, &[seq, h, dh])?;
        let v = g.permute(v, &[1, 0, 2])?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let p = if self.causal {
            g.causal_softmax(scores)?
        } else {
            g.softmax(scores)?
        };
        Ok((p, v))
    }

    /// Attention probabilities `[heads, S, S]`; rows sum to one.
    pub fn attention_weights(&self, g: &mut Graph, x: Var) -> Res<Var> {
        let seq = self.check(g, x)?;
        Ok(self.weights_and_values(g, x, seq)?.0)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Res<Var> {
        let seq = self.check(g, x)?;
        let (p, v) = self.weights_and_values(g, x, seq)?;
        let ctx = g.matmul(p, v)?;
        let ctx = g.permute(ctx, &[1, 0, 2])?;
        let ctx = g.reshape(ctx, &[seq, self.dim])?;
        self.output.forward(g, ctx)
    }

    pub fn param_count(&self) -> usize {
        self.query.param_count() + self.key.param_count() + self.value.param_count() + self.output.param_count()
    }

    /// Projections plus the two `S×S` score/context products.
    pub fn flops(&self, seq: usize) -> u64 {
        let proj = self.query.flops(seq) + self.key.flops(seq) + self.value.flops(seq) + self.output.flops(seq);
        proj + 2 * (2 * seq * seq * self.dim) as u64
    }
}
