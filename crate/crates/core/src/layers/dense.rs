use rand::Rng;

use super::{glorot_uniform, with_ones, Activation};
use crate::autodiff::{ParamId, ParamKind, ParamStore, Tape, Tensor, Var};
use crate::error::{ensure, Result};

/// Affine map plus activation, `phi(W^T [x; 1])`.
///
/// The bias is folded into the last row of `W`, which therefore has shape
/// `(n_in + 1) x n_out`.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut w = glorot_uniform(rng, &[n_in + 1, n_out], n_in, n_out);
        w.data_mut()[n_in * n_out..].iter_mut().for_each(|b| *b = 0.0);
        let weight = store.add(format!("{name}.W"), ParamKind::FoldedWeight, w);
        Self {
            weight,
            n_in,
            n_out,
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let n = tape.value(x).cols();
        ensure!(n == self.n_in, Dimension, "dense layer expects {} inputs, got {n}", self.n_in);
        let xe = with_ones(tape, x)?;
        let w = tape.param(store, self.weight);
        let a = tape.matmul(xe, w)?;
        Ok(self.activation.apply(tape, a)?)
    }
}

/// Evaluates a dense layer on one input vector.
pub fn dense_forward(x: &[f64], layer: &DenseLayer, store: &ParamStore) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::matrix(1, x.len(), x.to_vec())?);
    let y = layer.forward(&mut tape, store, xv)?;
    Ok(tape.value(y).data().to_vec())
}
