use rand::Rng;

use super::{dropout, Activation, BatchNorm, DenseLayer, ForwardCtx};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{ensure, Result};

/// Two-shortcut residual block: `x + F(x)`, where `F` is two rounds of
/// dense map, batch normalization, activation and dropout.
#[derive(Clone, Debug)]
pub struct ResidualBlock2 {
    pub first: DenseLayer,
    pub first_norm: BatchNorm,
    pub second: DenseLayer,
    pub second_norm: BatchNorm,
    pub activation: Activation,
    pub dropout: f64,
}

impl ResidualBlock2 {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        activation: Activation,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        ensure!((0.0..1.0).contains(&dropout), InvalidArgument, "dropout rate {dropout} outside [0, 1)");
        Ok(Self {
            first: DenseLayer::new(store, &format!("{name}.dense0"), width, width, Activation::Identity, rng),
            first_norm: BatchNorm::new(store, &format!("{name}.bn0"), width),
            second: DenseLayer::new(store, &format!("{name}.dense1"), width, width, Activation::Identity, rng),
            second_norm: BatchNorm::new(store, &format!("{name}.bn1"), width),
            activation,
            dropout,
        })
    }

    pub fn width(&self) -> usize {
        self.first.n_in
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let n = tape.value(x).cols();
        ensure!(n == self.width(), Dimension, "residual block of width {} got {n}", self.width());
        let mut h = x;
        for (dense, norm) in [(&self.first, &self.first_norm), (&self.second, &self.second_norm)] {
            let a = dense.forward(tape, store, h)?;
            let a = norm.forward(tape, store, a, ctx)?;
            let a = self.activation.apply(tape, a)?;
            h = dropout(tape, a, self.dropout, ctx)?;
        }
        Ok(tape.add(x, h)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check_params, Tensor};
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(store: &mut ParamStore, p: f64) -> ResidualBlock2 {
        ResidualBlock2::new(store, "layer0", 3, Activation::Relu, p, &mut ChaCha8Rng::seed_from_u64(2)).unwrap()
    }

    fn apply(b: &ResidualBlock2, s: &ParamStore, x: &[f64], rows: usize, ctx: &mut ForwardCtx) -> Vec<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::matrix(rows, 3, x.to_vec()).unwrap());
        let y = b.forward(&mut tape, s, xv, ctx).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn zero_residual_is_identity() {
        let mut s = ParamStore::new();
        let b = block(&mut s, 0.0);
        s.value_mut(b.first.weight).fill(0.0);
        s.value_mut(b.second.weight).fill(0.0);
        for bn in [&b.first_norm, &b.second_norm] {
            s.value_mut(bn.running_var).fill(0.0);
        }
        let x = [0.5, -1.0, 2.0];
        assert_eq!(apply(&b, &s, &x, 1, &mut ForwardCtx::infer()), x.to_vec());
    }

    #[test]
    fn inference_is_deterministic() {
        let mut s = ParamStore::new();
        let b = block(&mut s, 0.5);
        let x = [0.5, -1.0, 2.0];
        let a = apply(&b, &s, &x, 1, &mut ForwardCtx::infer());
        assert_eq!(a, apply(&b, &s, &x, 1, &mut ForwardCtx::infer()));
    }

    #[test]
    fn seeded_training_pass_is_reproducible() {
        let mut s = ParamStore::new();
        let b = block(&mut s, 0.5);
        let x = [0.5, -1.0, 2.0, 1.0, 0.0, -0.3];
        let a = apply(&b, &s, &x, 2, &mut ForwardCtx::train(9));
        assert_eq!(a, apply(&b, &s, &x, 2, &mut ForwardCtx::train(9)));
        assert_ne!(a, apply(&b, &s, &x, 2, &mut ForwardCtx::train(10)));
    }

    #[test]
    fn width_mismatch() {
        let mut s = ParamStore::new();
        let b = block(&mut s, 0.0);
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        assert!(b.forward(&mut tape, &s, xv, &mut ForwardCtx::infer()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut s = ParamStore::new();
        let b = ResidualBlock2::new(&mut s, "layer0", 3, Activation::Tanh, 0.3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x: Vec<f64> = (0..12).map(|i| ((i * 5 % 7) as f64 - 3.0) / 2.0).collect();
        let err = finite_diff_check_params::<Error, _>(
            &s,
            |tape, st| {
                let xv = tape.constant(Tensor::matrix(4, 3, x.clone()).unwrap());
                let y = b.forward(tape, st, xv, &mut ForwardCtx::train(1))?;
                Ok(tape.sum_squares(y)?)
            },
            1e-6,
            1,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
