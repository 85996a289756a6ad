use rand::Rng;

use super::cell::{BoundCell, CellKind, CellState, RecurrentCell};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{ensure, Result};
use crate::layers::{Activation, DenseLayer};

/// Recurrent layers stacked so that layer `l` reads layer `l - 1`'s hidden
/// sequence (`h_0 = x`).
#[derive(Clone, Debug)]
pub struct StackedRnn {
    pub cells: Vec<RecurrentCell>,
}

/// Hidden states of an unrolled stack, indexed `[layer][t]`.
#[derive(Clone, Debug)]
pub struct Unrolled {
    pub states: Vec<Vec<CellState>>,
}

impl Unrolled {
    /// Final state of every layer.
    pub fn last(&self) -> Vec<CellState> {
        self.states.iter().map(|s| *s.last().expect("non-empty sequence")).collect()
    }

    /// Final hidden state of the top layer.
    pub fn top(&self) -> Var {
        self.states.last().and_then(|s| s.last()).expect("non-empty stack").h
    }
}

impl StackedRnn {
    /// `layers` gives each layer's cell kind and hidden width, bottom first.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        layers: &[(CellKind, usize)],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        ensure!(!layers.is_empty(), InvalidArgument, "a recurrent stack needs at least one layer");
        let mut cells = Vec::with_capacity(layers.len());
        let mut d = input_dim;
        for (l, &(kind, hidden)) in layers.iter().enumerate() {
            ensure!(hidden >= 1, InvalidArgument, "hidden width must be >= 1");
            let name = if prefix.is_empty() { format!("layer{l}") } else { format!("{prefix}.layer{l}") };
            cells.push(RecurrentCell::new(store, &name, kind, d, hidden, rng));
            d = hidden;
        }
        Ok(Self { cells })
    }

    pub fn input_dim(&self) -> usize {
        self.cells[0].input_dim
    }

    pub fn top_hidden(&self) -> usize {
        self.cells.last().unwrap().hidden
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> Vec<BoundCell> {
        self.cells.iter().map(|c| c.bind(tape, store)).collect()
    }

    pub fn zero_states(&self, tape: &mut Tape, batch: usize) -> Vec<CellState> {
        self.cells.iter().map(|c| c.zero_state(tape, batch)).collect()
    }

    /// Advances every layer by one step; returns the new per-layer states.
    pub fn step(&self, tape: &mut Tape, bound: &[BoundCell], states: &[CellState], x: Var) -> Result<Vec<CellState>> {
        let mut input = x;
        let mut next = Vec::with_capacity(self.cells.len());
        for ((cell, p), s) in self.cells.iter().zip(bound).zip(states) {
            let ns = cell.step(tape, p, *s, input)?;
            input = ns.h;
            next.push(ns);
        }
        Ok(next)
    }

    /// Runs the stack over `inputs` (one `[b, d]` var per time step).
    ///
    /// States start at zero unless `init` is given. With `truncate_at = Some(t)`
    /// the states entering step `t` are detached, so gradients only reach
    /// steps `t..`.
    pub fn unroll(
        &self,
        tape: &mut Tape,
        bound: &[BoundCell],
        inputs: &[Var],
        init: Option<Vec<CellState>>,
        truncate_at: Option<usize>,
    ) -> Result<Unrolled> {
        ensure!(!inputs.is_empty(), InvalidArgument, "cannot unroll an empty sequence");
        let batch = tape.value(inputs[0]).rows();
        let mut states = init.unwrap_or_else(|| self.zero_states(tape, batch));
        let mut all: Vec<Vec<CellState>> = vec![Vec::with_capacity(inputs.len()); self.cells.len()];
        for (t, &x) in inputs.iter().enumerate() {
            if truncate_at == Some(t) {
                states = states
                    .iter()
                    .map(|s| CellState {
                        h: tape.detach(s.h),
                        c: s.c.map(|c| tape.detach(c)),
                    })
                    .collect();
            }
            states = self.step(tape, bound, &states, x)?;
            for (l, s) in states.iter().enumerate() {
                all[l].push(*s);
            }
        }
        Ok(Unrolled { states: all })
    }

    /// Unrolls one plain sequence `seq[T][d]` from zero state (or `init_h`,
    /// one hidden vector per layer) and returns hidden values `[layer][t]`.
    pub fn unroll_values(
        &self,
        store: &ParamStore,
        seq: &[Vec<f64>],
        init_h: Option<&[Vec<f64>]>,
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        ensure!(!seq.is_empty(), InvalidArgument, "cannot unroll an empty sequence");
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, store);
        let inputs = seq
            .iter()
            .map(|x| Ok(tape.constant(Tensor::matrix(1, x.len(), x.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        let init = match init_h {
            Some(hs) => {
                ensure!(hs.len() == self.cells.len(), Dimension, "one initial state per layer");
                let mut states = Vec::new();
                for (cell, h) in self.cells.iter().zip(hs) {
                    let mut s = cell.zero_state(&mut tape, 1);
                    s.h = tape.constant(Tensor::matrix(1, h.len(), h.clone())?);
                    states.push(s);
                }
                Some(states)
            }
            None => None,
        };
        let un = self.unroll(&mut tape, &bound, &inputs, init, None)?;
        Ok(un
            .states
            .iter()
            .map(|layer| layer.iter().map(|s| tape.value(s.h).data().to_vec()).collect())
            .collect())
    }
}

/// Linear map from the last hidden state to `m` outputs: one value for the
/// recursive strategy, `n_O` values for MIMO.
#[derive(Clone, Debug)]
pub struct ReadoutHead {
    pub dense: DenseLayer,
}

impl ReadoutHead {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            dense: DenseLayer::new(store, name, hidden, outputs, Activation::Identity, rng),
        }
    }

    pub fn outputs(&self) -> usize {
        self.dense.n_out
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        self.dense.forward(tape, store, h)
    }
}

/// `psi(V^T h)` with linear `psi`, checking the head width against `expected`.
pub fn readout(h_last: &[f64], head: &ReadoutHead, store: &ParamStore, expected: usize) -> Result<Vec<f64>> {
    ensure!(
        head.outputs() == expected,
        Dimension,
        "readout head has {} outputs, strategy needs {expected}",
        head.outputs()
    );
    crate::layers::dense_forward(h_last, &head.dense, store)
}
