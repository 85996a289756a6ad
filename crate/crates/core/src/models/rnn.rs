use rand::Rng;

use super::{input_var, steps, Network};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::data::Batch;
use crate::error::{ensure, Result};
use crate::layers::{dropout, ForwardCtx};
use crate::recurrent::{CellKind, ReadoutHead, StackedRnn, Tbptt};

/// Stacked recurrent network read out from the top layer's last hidden
/// state: one output for Rec, `n_O` for MIMO.
#[derive(Clone, Debug)]
pub struct RnnNetwork {
    pub store: ParamStore,
    pub stack: StackedRnn,
    pub head: ReadoutHead,
    pub dropout: f64,
    /// Truncation applied in training mode.
    pub tbptt: Option<Tbptt>,
    rows: usize,
    width: usize,
}

impl RnnNetwork {
    pub fn new(
        kind: CellKind,
        rows: usize,
        width: usize,
        hidden: &[usize],
        outputs: usize,
        p_drop: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        ensure!((0.0..1.0).contains(&p_drop), InvalidArgument, "dropout rate {p_drop} outside [0, 1)");
        let mut store = ParamStore::new();
        let layers: Vec<_> = hidden.iter().map(|&h| (kind, h)).collect();
        let stack = StackedRnn::new(&mut store, "", width, &layers, rng)?;
        let head = ReadoutHead::new(&mut store, "readout", stack.top_hidden(), outputs, rng);
        Ok(Self {
            store,
            stack,
            head,
            dropout: p_drop,
            tbptt: None,
            rows,
            width,
        })
    }
}

impl Network for RnnNetwork {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn outputs(&self) -> usize {
        self.head.outputs()
    }

    fn recurrent(&self) -> bool {
        true
    }

    fn forward_with(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, ctx: &mut ForwardCtx) -> Result<Var> {
        let x = input_var(tape, batch, self.rows, self.width)?;
        let xs = steps(tape, x)?;
        let bound = self.stack.bind(tape, store);
        let cut = if ctx.is_train() {
            self.tbptt.and_then(|t| t.truncation_point(self.rows))
        } else {
            None
        };
        let un = self.stack.unroll(tape, &bound, &xs, None, cut)?;
        let h = dropout(tape, un.top(), self.dropout, ctx)?;
        self.head.forward(tape, store, h)
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
        let x: Vec<f64> = (0..2 * 5 * 2).map(|i| ((i * 3 % 7) as f64 - 3.0) / 4.0).collect();
        let mut b = infer_batch(Tensor::new(vec![2, 5, 2], x).unwrap(), 2, None);
        b.y = Tensor::matrix(2, 2, vec![0.2, -0.1, 0.4, 0.3]).unwrap();
        b
    }

    #[test]
    fn every_cell_kind_passes_gradient_check() {
        for kind in [CellKind::Ernn, CellKind::Lstm, CellKind::Gru] {
            let net = RnnNetwork::new(kind, 5, 2, &[3, 2], 2, 0.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let err = network_grad_check(&net, &batch(), None, 1e-6, 1).unwrap();
            assert!(err < 1e-4, "{kind:?}: {err}");
        }
    }

    #[test]
    fn truncation_only_in_training() {
        let mut net = RnnNetwork::new(CellKind::Gru, 5, 2, &[3], 2, 0.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = batch();
        let out = |net: &RnnNetwork, ctx: &mut ForwardCtx| {
            let mut t = Tape::new();
            let y = net.forward(&mut t, &b, ctx).unwrap();
            t.value(y).clone()
        };
        let full = out(&net, &mut ForwardCtx::infer());
        net.tbptt = Some(Tbptt {
            backward_steps: 2,
            forward_steps: 1,
        });
        // forward values never change under truncation
        assert_eq!(out(&net, &mut ForwardCtx::train(0)), full);
        assert_eq!(out(&net, &mut ForwardCtx::infer()), full);
        assert!(net.recurrent());
    }
}
