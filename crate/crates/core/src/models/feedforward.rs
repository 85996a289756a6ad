use rand::Rng;

use super::{input_var, Network};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::data::Batch;
use crate::error::{ensure, Result};
use crate::layers::{dropout, Activation, DenseLayer, ForwardCtx, ResidualBlock2};

/// Fully connected network on the flattened window.
#[derive(Clone, Debug)]
pub struct FnnNet {
    pub store: ParamStore,
    pub hidden: Vec<DenseLayer>,
    pub output: DenseLayer,
    pub dropout: f64,
    rows: usize,
    width: usize,
}

impl FnnNet {
    pub fn new(rows: usize, width: usize, hidden: &[usize], outputs: usize, p_drop: f64, rng: &mut impl Rng) -> Result<Self> {
        ensure!((0.0..1.0).contains(&p_drop), InvalidArgument, "dropout rate {p_drop} outside [0, 1)");
        let mut store = ParamStore::new();
        let mut n_in = rows * width;
        let mut layers = Vec::with_capacity(hidden.len());
        for (l, &h) in hidden.iter().enumerate() {
            layers.push(DenseLayer::new(&mut store, &format!("layer{l}"), n_in, h, Activation::Relu, rng));
            n_in = h;
        }
        let output = DenseLayer::new(&mut store, "output", n_in, outputs, Activation::Identity, rng);
        Ok(Self {
            store,
            hidden: layers,
            output,
            dropout: p_drop,
            rows,
            width,
        })
    }
}

impl Network for FnnNet {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn outputs(&self) -> usize {
        self.output.n_out
    }

    fn forward_with(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, ctx: &mut ForwardCtx) -> Result<Var> {
        let x = input_var(tape, batch, self.rows, self.width)?;
        let mut h = tape.reshape(x, &[batch.size(), self.rows * self.width])?;
        for layer in &self.hidden {
            h = layer.forward(tape, store, h)?;
            h = dropout(tape, h, self.dropout, ctx)?;
        }
        self.output.forward(tape, store, h)
    }
}

/// Deep residual network: input projection, `blocks` two-shortcut residual
/// blocks with batch normalization and dropout, linear output.
#[derive(Clone, Debug)]
pub struct DfnnNet {
    pub store: ParamStore,
    pub input: DenseLayer,
    pub blocks: Vec<ResidualBlock2>,
    pub output: DenseLayer,
    rows: usize,
    width: usize,
}

impl DfnnNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rows: usize,
        width: usize,
        hidden: usize,
        blocks: usize,
        outputs: usize,
        p_drop: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let input = DenseLayer::new(&mut store, "input", rows * width, hidden, Activation::Relu, rng);
        let blocks = (0..blocks)
            .map(|l| ResidualBlock2::new(&mut store, &format!("block{l}"), hidden, Activation::Relu, p_drop, rng))
            .collect::<Result<Vec<_>>>()?;
        let output = DenseLayer::new(&mut store, "output", hidden, outputs, Activation::Identity, rng);
        Ok(Self {
            store,
            input,
            blocks,
            output,
            rows,
            width,
        })
    }
}

impl Network for DfnnNet {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn outputs(&self) -> usize {
        self.output.n_out
    }

    fn forward_with(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, ctx: &mut ForwardCtx) -> Result<Var> {
        let x = input_var(tape, batch, self.rows, self.width)?;
        let x = tape.reshape(x, &[batch.size(), self.rows * self.width])?;
        let mut h = self.input.forward(tape, store, x)?;
        for b in &self.blocks {
            h = b.forward(tape, store, h, ctx)?;
        }
        self.output.forward(tape, store, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::models::{infer_batch, network_grad_check};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch() -> Batch {
        let x: Vec<f64> = (0..2 * 4 * 2).map(|i| ((i * 5 % 7) as f64 - 3.0) / 3.0).collect();
        let mut b = infer_batch(Tensor::new(vec![2, 4, 2], x).unwrap(), 3, None);
        b.y = Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.4]).unwrap();
        b
    }

    #[test]
    fn fnn_shapes_and_determinism() {
        let net = FnnNet::new(4, 2, &[5, 3], 3, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = batch();
        let run = || {
            let mut t = Tape::new();
            let y = net.forward(&mut t, &b, &mut ForwardCtx::infer()).unwrap();
            t.value(y).clone()
        };
        assert_eq!(run().shape(), &[2, 3]);
        assert_eq!(run(), run());
        let wrong = infer_batch(Tensor::zeros(&[2, 3, 2]), 3, None);
        assert!(net.forward(&mut Tape::new(), &wrong, &mut ForwardCtx::infer()).is_err());
        assert!(network_grad_check(&net, &b, None, 1e-6, 1).unwrap() < 1e-4);
    }

    #[test]
    fn dfnn_shape_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DfnnNet::new(4, 2, 6, 2, 3, 0.1, &mut rng).unwrap();
        let b = batch();
        let mut t = Tape::new();
        let y = net.forward(&mut t, &b, &mut ForwardCtx::train(5)).unwrap();
        assert_eq!(t.shape(y), &[2, 3]);
        assert!(network_grad_check(&net, &b, Some(9), 1e-6, 1).unwrap() < 1e-4);
    }
}
