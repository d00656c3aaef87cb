use rand_chacha::ChaCha8Rng;

use super::{uniform, Graph, ParamId, ParamStore, Res};
use crate::autodiff::Var;
use crate::error::TensorError;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct LstmLayerParams {
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
    input_size: usize,
}

/// Hidden and cell state of every stacked layer, each `[B, hidden]`.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

/// Unidirectional stacked LSTM, gates ordered (input, forget, cell, output).
///
/// Each layer carries an input-side and a hidden-side bias per gate set, so a
/// layer holds `4·h·(in + h) + 8·h` scalars. No dropout between layers.
#[derive(Debug, Clone)]
pub struct Lstm {
    layers: Vec<LstmLayerParams>,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_size: usize,
        hidden: usize,
        num_layers: usize,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let layers = (0..num_layers)
            .map(|i| {
                let inp = if i == 0 { input_size } else { hidden };
                LstmLayerParams {
                    w_ih: store.add(format!("{name}.{i}.w_ih"), uniform(rng, &[inp, 4 * hidden], bound)),
                    w_hh: store.add(format!("{name}.{i}.w_hh"), uniform(rng, &[hidden, 4 * hidden], bound)),
                    b_ih: store.add(format!("{name}.{i}.b_ih"), uniform(rng, &[4 * hidden], bound)),
                    b_hh: store.add(format!("{name}.{i}.b_hh"), uniform(rng, &[4 * hidden], bound)),
                    input_size: inp,
                }
            })
            .collect();
        Self { layers, hidden }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size
    }

    /// Runs the sequence `x: [B, L, in]` and returns `[B, L, hidden]` outputs
    /// of the top layer plus the final state. With `reverse`, steps run from
    /// `L−1` down to `0` and outputs stay aligned with their input positions.
    pub fn forward(&self, g: &mut Graph, x: Var, init: Option<&LstmState>, reverse: bool) -> Res<(Var, LstmState)> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.input_size() {
            return Err(TensorError::ShapeMismatch {
                op: "lstm",
                lhs: shape,
                rhs: vec![self.input_size()],
            });
        }
        let (batch, len) = (shape[0], shape[1]);
        let h = self.hidden;
        let mut state = LstmState {
            h: Vec::new(),
            c: Vec::new(),
        };
        let mut seq = x;
        for (li, layer) in self.layers.iter().enumerate() {
            let w_ih = g.param(layer.w_ih)?;
            let w_hh = g.param(layer.w_hh)?;
            let b_ih = g.param(layer.b_ih)?;
            let b_hh = g.param(layer.b_hh)?;
            let xw = g.matmul(seq, w_ih)?;
            let xw = g.add(xw, b_ih)?;
            let (mut hs, mut cs) = match init {
                Some(s) => (s.h[li], s.c[li]),
                None => {
                    let z = g.constant(Tensor::zeros(&[batch, h]))?;
                    (z, z)
                }
            };
            let mut outs = vec![None; len];
            let order: Box<dyn Iterator<Item = usize>> = if reverse {
                Box::new((0..len).rev())
            } else {
                Box::new(0..len)
            };
            for t in order {
                let xt = g.slice(xw, 1, t, 1)?;
                let xt = g.reshape(xt, &[batch, 4 * h])?;
                let hw = g.matmul(hs, w_hh)?;
                let hw = g.add(hw, b_hh)?;
                let gates = g.add(xt, hw)?;
                let act = g.sigmoid(gates)?;
                let i_gate = g.slice(act, 1, 0, h)?;
                let f_gate = g.slice(act, 1, h, h)?;
                let o_gate = g.slice(act, 1, 3 * h, h)?;
                let cand = g.slice(gates, 1, 2 * h, h)?;
                let cand = g.tanh(cand)?;
                let keep = g.mul(f_gate, cs)?;
                let write = g.mul(i_gate, cand)?;
                cs = g.add(keep, write)?;
                let tc = g.tanh(cs)?;
                hs = g.mul(o_gate, tc)?;
                outs[t] = Some(g.reshape(hs, &[batch, 1, h])?);
            }
            state.h.push(hs);
            state.c.push(cs);
            let outs: Vec<Var> = outs.into_iter().map(|o| o.expect("every step visited")).collect();
            seq = if outs.is_empty() {
                g.constant(Tensor::zeros(&[batch, 0, h]))?
            } else {
                g.concat(&outs, 1)?
            };
        }
        Ok((seq, state))
    }

    pub fn layer_param_counts(&self) -> Vec<usize> {
        let h = self.hidden;
        self.layers
            .iter()
            .map(|l| 4 * h * (l.input_size + h) + 8 * h)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_param_counts().iter().sum()
    }

    /// Gate matmuls and both bias adds for `steps` sequence elements.
    pub fn flops(&self, steps: usize) -> u64 {
        let h = self.hidden;
        self.layers
            .iter()
            .map(|l| (steps * (2 * 4 * h * (l.input_size + h) + 8 * h)) as u64)
            .sum()
    }
}

/// Two independent LSTMs reading the sequence forwards and backwards; the
/// output at each step is `[forward ; backward]`, width `2·hidden`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_size: usize,
        hidden: usize,
        num_layers: usize,
    ) -> Self {
        Self {
            forward: Lstm::new(store, rng, &format!("{name}.fwd"), input_size, hidden, num_layers),
            backward: Lstm::new(store, rng, &format!("{name}.bwd"), input_size, hidden, num_layers),
        }
    }

    pub fn output_size(&self) -> usize {
        2 * self.forward.hidden
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Res<Var> {
        let (f, _) = self.forward.forward(g, x, None, false)?;
        let (b, _) = self.backward.forward(g, x, None, true)?;
        g.concat(&[f, b], 2)
    }

    pub fn param_count(&self) -> usize {
        self.forward.param_count() + self.backward.param_count()
    }

    pub fn flops(&self, steps: usize) -> u64 {
        self.forward.flops(steps) + self.backward.flops(steps)
    }
}
