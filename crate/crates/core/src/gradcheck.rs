//! Central finite-difference checking of tape gradients.
//!
//! The numeric side only evaluates forward values, so it is independent of
//! every backward rule it is used to verify.

use crate::autodiff::{Tape, Var};
use crate::nn::{Graph, ParamStore};
use crate::error::TensorError;
use crate::tensor::Tensor;

/// Outcome of a gradient check, one entry per input.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` per input.
    pub relative_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Gradients with a smaller norm than this are compared in absolute terms:
/// finite differences of a truly zero gradient leave ~1e-10 of round-off.
pub const NORM_FLOOR: f64 = 1e-4;

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖, NORM_FLOOR)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(NORM_FLOOR)
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences of step `h`.
pub fn check<F>(inputs: &[Tensor], f: F, h: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, &vars)?;
        tape.value(out)
            .item()
            .ok_or_else(|| TensorError::NonScalarLoss(tape.shape(out).to_vec()))
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("leaf gradient").data().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - h;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        relative_errors.push(relative_error(&analytic, &numeric));
    }
    Ok(GradCheckReport { relative_errors })
}

/// Reduces any tensor to a scalar through a fixed random projection so every
/// output element contributes to the checked gradient.
pub fn project(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var, TensorError> {
    let w = tape.constant(weights.clone().reshaped(tape.shape(out))?)?;
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

/// Like [`check`], for a function of layer inputs and every parameter in
/// `store`. Entries cover `inputs` first, then parameters in store order.
/// Runs in evaluation mode, so dropout is the identity.
pub fn check_graph<F>(store: &ParamStore, inputs: &[Tensor], f: F, h: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |store: &ParamStore, values: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::eval(store);
        let vars = values
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut g, &vars)?;
        g.value(out)
            .item()
            .ok_or_else(|| TensorError::NonScalarLoss(g.shape(out).to_vec()))
    };

    let (mut analytic, params) = {
        let mut g = Graph::eval(store);
        let vars = inputs
            .iter()
            .map(|t| g.leaf(t.clone(), true))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut g, &vars)?;
        let grads = g.backward(out)?;
        let a: Vec<Tensor> = vars
            .iter()
            .map(|v| grads.get(*v).expect("leaf gradient").clone())
            .collect();
        (a, g.param_grads(&grads))
    };
    analytic.extend(params);

    let mut relative_errors = Vec::with_capacity(analytic.len());
    let mut probe = inputs.to_vec();
    for (i, a) in analytic[..inputs.len()].iter().enumerate() {
        let mut numeric = vec![0.0; a.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let plus = eval(store, &probe)?;
            probe[i].data_mut()[j] = orig - h;
            let minus = eval(store, &probe)?;
            probe[i].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        relative_errors.push(relative_error(a.data(), &numeric));
    }
    let mut perturbed = store.clone();
    let mut values = store.values();
    for (k, a) in analytic[inputs.len()..].iter().enumerate() {
        let mut numeric = vec![0.0; a.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = values[k].data()[j];
            values[k].data_mut()[j] = orig + h;
            perturbed.set_values(values.clone())?;
            let plus = eval(&perturbed, inputs)?;
            values[k].data_mut()[j] = orig - h;
            perturbed.set_values(values.clone())?;
            let minus = eval(&perturbed, inputs)?;
            values[k].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        relative_errors.push(relative_error(a.data(), &numeric));
    }
    Ok(GradCheckReport { relative_errors })
}
