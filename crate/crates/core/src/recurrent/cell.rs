use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamKind, ParamStore, Tape, Tensor, Var};
use crate::error::{ensure, Result};
use crate::layers::{glorot_uniform, orthogonal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Ernn,
    Lstm,
    Gru,
}

impl CellKind {
    /// Number of `n_H`-wide pre-activation blocks.
    pub fn blocks(self) -> usize {
        match self {
            CellKind::Ernn => 1,
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

/// Pre-activation block of a gated cell.
///
/// LSTM blocks are ordered input, forget, output, candidate; GRU blocks are
/// update, reset, candidate; the ERNN has a single candidate block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Output,
    Update,
    Reset,
    Candidate,
}

/// One recurrent cell: ERNN, LSTM or GRU.
///
/// Input weights `U` are `d x (G n_H)`, recurrent weights `W` are
/// `n_H x (G n_H)` (the GRU keeps its candidate recurrent map in a separate
/// `n_H x n_H` array because it acts on `r * h`), and biases are `G n_H`.
#[derive(Clone, Debug)]
pub struct RecurrentCell {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub input_weights: ParamId,
    pub recurrent_weights: ParamId,
    pub candidate_weights: Option<ParamId>,
    pub bias: ParamId,
}

/// Hidden state of a cell; `c` is present for LSTM only.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub h: Var,
    pub c: Option<Var>,
}

/// Parameters of a cell bound to a tape once per unrolled sequence, so every
/// time step shares the same leaves.
#[derive(Clone, Copy, Debug)]
pub struct BoundCell {
    input_weights: Var,
    recurrent_weights: Var,
    candidate_weights: Option<Var>,
    bias: Var,
}

impl RecurrentCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: CellKind,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let g = kind.blocks();
        let u = glorot_uniform(rng, &[input_dim, g * hidden], input_dim, g * hidden);
        let rec_blocks = if kind == CellKind::Gru { 2 } else { g };
        let w = orthogonal_blocks(rng, hidden, rec_blocks);
        let mut b = Tensor::zeros(&[g * hidden]);
        if kind == CellKind::Lstm {
            b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        }
        let input_weights = store.add(format!("{name}.U"), ParamKind::Weight, u);
        let recurrent_weights = store.add(format!("{name}.W"), ParamKind::Weight, w);
        let candidate_weights = (kind == CellKind::Gru)
            .then(|| store.add(format!("{name}.W_c"), ParamKind::Weight, orthogonal(rng, hidden)));
        let bias = store.add(format!("{name}.b"), ParamKind::Bias, b);
        Self {
            kind,
            input_dim,
            hidden,
            input_weights,
            recurrent_weights,
            candidate_weights,
            bias,
        }
    }

    fn gate_offset(&self, gate: Gate) -> Result<usize> {
        let idx = match (self.kind, gate) {
            (CellKind::Ernn, Gate::Candidate) => 0,
            (CellKind::Lstm, Gate::Input) => 0,
            (CellKind::Lstm, Gate::Forget) => 1,
            (CellKind::Lstm, Gate::Output) => 2,
            (CellKind::Lstm, Gate::Candidate) => 3,
            (CellKind::Gru, Gate::Update) => 0,
            (CellKind::Gru, Gate::Reset) => 1,
            (CellKind::Gru, Gate::Candidate) => 2,
            (kind, gate) => {
                return Err(crate::Error::InvalidArgument(format!("{kind:?} cell has no {gate:?} gate")));
            }
        };
        Ok(idx * self.hidden)
    }

    /// Sets every bias entry of one gate block.
    pub fn set_gate_bias(&self, store: &mut ParamStore, gate: Gate, value: f64) -> Result<()> {
        let off = self.gate_offset(gate)?;
        store.value_mut(self.bias).data_mut()[off..off + self.hidden].iter_mut().for_each(|v| *v = value);
        Ok(())
    }

    pub fn zero_params(&self, store: &mut ParamStore) {
        for id in [Some(self.input_weights), Some(self.recurrent_weights), self.candidate_weights, Some(self.bias)]
            .into_iter()
            .flatten()
        {
            store.value_mut(id).fill(0.0);
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundCell {
        BoundCell {
            input_weights: tape.param(store, self.input_weights),
            recurrent_weights: tape.param(store, self.recurrent_weights),
            candidate_weights: self.candidate_weights.map(|id| tape.param(store, id)),
            bias: tape.param(store, self.bias),
        }
    }

    /// Zero state for a batch of `batch` sequences.
    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> CellState {
        let h = tape.constant(Tensor::zeros(&[batch, self.hidden]));
        let c = (self.kind == CellKind::Lstm).then(|| tape.constant(Tensor::zeros(&[batch, self.hidden])));
        CellState { h, c }
    }

    /// One time step for a batch: `x_t[b, d]`, state `[b, n_H]`.
    pub fn step(&self, tape: &mut Tape, p: &BoundCell, state: CellState, x: Var) -> Result<CellState> {
        let d = tape.value(x).cols();
        ensure!(d == self.input_dim, Dimension, "cell expects input width {}, got {d}", self.input_dim);
        ensure!(
            tape.value(state.h).cols() == self.hidden,
            Dimension,
            "cell expects state width {}",
            self.hidden
        );
        let n = self.hidden;
        let xu = tape.matmul(x, p.input_weights)?;
        let xu = tape.add_row(xu, p.bias)?;
        let hw = tape.matmul(state.h, p.recurrent_weights)?;
        match self.kind {
            CellKind::Ernn => {
                let a = tape.add(xu, hw)?;
                Ok(CellState { h: tape.tanh(a)?, c: None })
            }
            CellKind::Lstm => {
                let c_prev = state.c.ok_or_else(|| crate::Error::Dimension("LSTM state without cell".into()))?;
                let z = tape.add(xu, hw)?;
                let zi = tape.slice(z, 0, n)?;
                let zf = tape.slice(z, n, n)?;
                let zo = tape.slice(z, 2 * n, n)?;
                let zc = tape.slice(z, 3 * n, n)?;
                let i = tape.sigmoid(zi)?;
                let f = tape.sigmoid(zf)?;
                let o = tape.sigmoid(zo)?;
                let cand = tape.tanh(zc)?;
                let keep = tape.mul(f, c_prev)?;
                let write = tape.mul(i, cand)?;
                let c = tape.add(keep, write)?;
                let tc = tape.tanh(c)?;
                let h = tape.mul(o, tc)?;
                Ok(CellState { h, c: Some(c) })
            }
            CellKind::Gru => {
                let wc = p.candidate_weights.expect("GRU binds candidate weights");
                let xu_ur = tape.slice(xu, 0, 2 * n)?;
                let zur = tape.add(xu_ur, hw)?;
                let zu = tape.slice(zur, 0, n)?;
                let zr = tape.slice(zur, n, n)?;
                let u = tape.sigmoid(zu)?;
                let r = tape.sigmoid(zr)?;
                let rh = tape.mul(r, state.h)?;
                let rhw = tape.matmul(rh, wc)?;
                let xc = tape.slice(xu, 2 * n, n)?;
                let zc = tape.add(xc, rhw)?;
                let cand = tape.tanh(zc)?;
                let keep = tape.mul(u, state.h)?;
                let one_minus_u = tape.affine(u, -1.0, 1.0)?;
                let write = tape.mul(one_minus_u, cand)?;
                Ok(CellState {
                    h: tape.add(keep, write)?,
                    c: None,
                })
            }
        }
    }

    /// Single-sequence step on plain vectors; returns `(h, c)`.
    pub fn step_values(
        &self,
        store: &ParamStore,
        h_prev: &[f64],
        c_prev: Option<&[f64]>,
        x: &[f64],
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        ensure!(h_prev.len() == self.hidden, Dimension, "state width {} != {}", h_prev.len(), self.hidden);
        ensure!(x.len() == self.input_dim, Dimension, "input width {} != {}", x.len(), self.input_dim);
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, store);
        let h = tape.constant(Tensor::matrix(1, self.hidden, h_prev.to_vec())?);
        let c = match (self.kind, c_prev) {
            (CellKind::Lstm, Some(c)) => Some(tape.constant(Tensor::matrix(1, self.hidden, c.to_vec())?)),
            (CellKind::Lstm, None) => Some(tape.constant(Tensor::zeros(&[1, self.hidden]))),
            _ => None,
        };
        let xv = tape.constant(Tensor::matrix(1, x.len(), x.to_vec())?);
        let next = self.step(&mut tape, &bound, CellState { h, c }, xv)?;
        Ok((
            tape.value(next.h).data().to_vec(),
            next.c.map(|c| tape.value(c).data().to_vec()),
        ))
    }
}

fn orthogonal_blocks(rng: &mut impl Rng, n: usize, blocks: usize) -> Tensor {
    let mats: Vec<Tensor> = (0..blocks).map(|_| orthogonal(rng, n)).collect();
    let mut data = Vec::with_capacity(n * n * blocks);
    for r in 0..n {
        for m in &mats {
            data.extend_from_slice(&m.data()[r * n..(r + 1) * n]);
        }
    }
    Tensor::new(vec![n, n * blocks], data).expect("finite init")
}

/// `h_t = tanh(W^T h_prev + U^T x_t + b)`.
pub fn ernn_step(cell: &RecurrentCell, store: &ParamStore, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    ensure!(cell.kind == CellKind::Ernn, InvalidArgument, "not an ERNN cell");
    Ok(cell.step_values(store, h_prev, None, x)?.0)
}

/// LSTM step returning `(h, c)`.
pub fn lstm_step(
    cell: &RecurrentCell,
    store: &ParamStore,
    h_prev: &[f64],
    c_prev: &[f64],
    x: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure!(cell.kind == CellKind::Lstm, InvalidArgument, "not an LSTM cell");
    ensure!(c_prev.len() == cell.hidden, Dimension, "cell width {} != {}", c_prev.len(), cell.hidden);
    let (h, c) = cell.step_values(store, h_prev, Some(c_prev), x)?;
    Ok((h, c.expect("LSTM returns cell state")))
}

/// `h_t = u * h_prev + (1 - u) * tanh(W_c (r * h_prev) + U_c x_t + b_c)`.
pub fn gru_step(cell: &RecurrentCell, store: &ParamStore, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    ensure!(cell.kind == CellKind::Gru, InvalidArgument, "not a GRU cell");
    Ok(cell.step_values(store, h_prev, None, x)?.0)
}
