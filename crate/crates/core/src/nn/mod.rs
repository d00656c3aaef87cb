//! Layers, their parameters, and the per-pass graph that binds them to a tape.
//!
//! Parameters live in a [`ParamStore`] owned by the model. A [`Graph`] is
//! created for each forward pass; it lazily registers parameters on its tape
//! the first time a layer asks for them and owns the dropout generator.

mod attention;
mod conv;
mod linear;
mod lstm;
mod transformer;

pub use attention::MultiHeadSelfAttention;
pub use conv::ConvBlock;
pub use linear::Linear;
pub use lstm::{BiLstm, Lstm, LstmState};
pub use transformer::{sinusoidal_encoding, TransformerBlock};

use std::ops::{Deref, DerefMut};

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::TensorError;
use crate::tensor::Tensor;

type Res<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub value: Tensor,
}

/// Flat, ordered collection of named learnable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<NamedParam>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(NamedParam {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedParam> {
        self.params.iter()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Replaces all values, keeping names. Shapes must match.
    pub fn set_values(&mut self, values: Vec<Tensor>) -> Res<()> {
        if values.len() != self.params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "set_values",
                lhs: vec![self.params.len()],
                rhs: vec![values.len()],
            });
        }
        for (p, v) in self.params.iter().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "set_values",
                    lhs: p.value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }
}

/// Uniform initialization in `±bound`.
pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Uniform::new_inclusive(-bound, bound);
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

/// One forward (and optionally backward) pass over a [`ParamStore`].
pub struct Graph<'s> {
    tape: Tape,
    store: &'s ParamStore,
    bound: Vec<Option<Var>>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'s> Graph<'s> {
    /// Evaluation pass: dropout is the identity.
    pub fn eval(store: &'s ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            dropout_rng: None,
        }
    }

    /// Training pass: dropout masks are drawn from `rng`.
    pub fn train(store: &'s ParamStore, rng: ChaCha8Rng) -> Self {
        Self {
            dropout_rng: Some(rng),
            ..Self::eval(store)
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn param(&mut self, id: ParamId) -> Res<Var> {
        if let Some(v) = self.bound[id.0] {
            return Ok(v);
        }
        let v = self.tape.param(self.store.get(id).clone())?;
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    /// Inverted dropout with drop probability `p`; identity in evaluation.
    pub fn dropout(&mut self, x: Var, p: f64) -> Res<Var> {
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        if p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - p;
        let n = self.tape.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.tape.dropout(x, mask)
    }

    /// Gradients for every parameter in store order (zeros for parameters
    /// this pass never touched).
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.bound
            .iter()
            .zip(self.store.iter())
            .map(|(b, p)| {
                b.and_then(|v| grads.get(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
            .collect()
    }
}

impl Deref for Graph<'_> {
    type Target = Tape;

    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Graph<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use crate::tensor::Tensor;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;

    #[test]
    fn dropout_eval_is_identity() {
        let store = ParamStore::new();
        let mut g = Graph::eval(&store);
        let x = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let y = g.dropout(x, 0.5).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_train_masks_and_rescales() {
        let store = ParamStore::new();
        let mut g = Graph::train(&store, rng(0));
        let x = g.constant(Tensor::full(&[1000], 1.0)).unwrap();
        let y = g.dropout(x, 0.5).unwrap();
        let vals = g.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = vals.iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept));
    }

    #[test]
    fn param_bound_once() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![1.0]));
        let mut g = Graph::eval(&store);
        let a = g.param(id).unwrap();
        let b = g.param(id).unwrap();
        assert_eq!(a, b);
        assert_eq!(g.len(), 1);
    }
}
