//! Encoder-decoder forecaster trained with teacher forcing (TF) or with its
//! own fed-back estimates (SG).
//!
//! The encoder's final states initialize the decoder, layer by layer, and the
//! encoder's top hidden state (the context) is appended to every decoder
//! input. Decoder step `j` reads `[previous value; calendar of step j;
//! context]`; the first previous value is the last load of the window.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::data::Batch;
use crate::error::{ensure, Result};
use crate::layers::{dropout, Activation, DenseLayer, ForwardCtx};
use crate::models::{input_var, steps, Network};
use crate::recurrent::{CellKind, CellState, StackedRnn};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderRegime {
    /// Ground-truth feedback during training, own estimates at inference.
    TeacherForced,
    /// Own estimates during training and inference.
    SelfGenerated,
}

#[derive(Clone, Debug)]
pub struct EncoderDecoder {
    pub store: ParamStore,
    pub encoder: StackedRnn,
    pub decoder: StackedRnn,
    pub head: DenseLayer,
    pub regime: DecoderRegime,
    pub dropout: f64,
    rows: usize,
    width: usize,
    temperatures: usize,
    n_o: usize,
}

/// Inputs shared by both decode modes.
pub struct DecodeStart<'a> {
    pub states: Vec<CellState>,
    pub context: Var,
    /// `[b, 1]` value fed at the first step.
    pub first: Var,
    /// `[b, calendar]` per step, empty without exogenous inputs.
    pub calendar: &'a [Var],
}

impl EncoderDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cell: CellKind,
        rows: usize,
        width: usize,
        temperatures: usize,
        hidden: &[usize],
        n_o: usize,
        regime: DecoderRegime,
        p_drop: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        ensure!((0.0..1.0).contains(&p_drop), InvalidArgument, "dropout rate {p_drop} outside [0, 1)");
        ensure!(n_o >= 1, InvalidArgument, "horizon must be >= 1");
        ensure!(width > temperatures, InvalidArgument, "window width {width} leaves no load column");
        let mut store = ParamStore::new();
        let layers: Vec<_> = hidden.iter().map(|&h| (cell, h)).collect();
        let encoder = StackedRnn::new(&mut store, "encoder", width, &layers, rng)?;
        let context = encoder.top_hidden();
        let calendar = width - 1 - temperatures;
        let decoder = StackedRnn::new(&mut store, "decoder", 1 + calendar + context, &layers, rng)?;
        let head = DenseLayer::new(&mut store, "head", decoder.top_hidden(), 1, Activation::Identity, rng);
        Ok(Self {
            store,
            encoder,
            decoder,
            head,
            regime,
            dropout: p_drop,
            rows,
            width,
            temperatures,
            n_o,
        })
    }

    pub fn context_dim(&self) -> usize {
        self.encoder.top_hidden()
    }

    fn calendar_width(&self) -> usize {
        self.width - 1 - self.temperatures
    }

    /// Runs the encoder over `x[b, T, d]`; returns the final state of every
    /// layer and the context (top layer's last hidden state).
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Vec<CellState>, Var)> {
        let xs = steps(tape, x)?;
        let bound = self.encoder.bind(tape, store);
        let un = self.encoder.unroll(tape, &bound, &xs, None, None)?;
        Ok((un.last(), un.top()))
    }

    fn decode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        start: DecodeStart,
        teacher: Option<Var>,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        ensure!(
            start.calendar.is_empty() || start.calendar.len() == self.n_o,
            Dimension,
            "{} calendar rows for horizon {}",
            start.calendar.len(),
            self.n_o
        );
        let bound = self.decoder.bind(tape, store);
        let mut states = start.states;
        let mut prev = start.first;
        let mut out = Vec::with_capacity(self.n_o);
        for j in 0..self.n_o {
            let mut parts = vec![prev];
            if let Some(&c) = start.calendar.get(j) {
                parts.push(c);
            }
            parts.push(start.context);
            let input = tape.concat(&parts)?;
            states = self.decoder.step(tape, &bound, &states, input)?;
            let h = dropout(tape, states.last().expect("decoder layer").h, self.dropout, ctx)?;
            let y = self.head.forward(tape, store, h)?;
            out.push(y);
            prev = match teacher {
                Some(t) => tape.slice(t, j, 1)?,
                None => y,
            };
        }
        Ok(tape.concat(&out)?)
    }

    /// Decoder fed the ground truth `targets[b, n_O]` of the previous step.
    pub fn decode_teacher_forced(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        start: DecodeStart,
        targets: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let n = tape.value(targets).cols();
        ensure!(n == self.n_o, Dimension, "{n} targets for horizon {}", self.n_o);
        self.decode(tape, store, start, Some(targets), ctx)
    }

    /// Decoder fed its own previous estimate.
    pub fn decode_free_running(&self, tape: &mut Tape, store: &ParamStore, start: DecodeStart, ctx: &mut ForwardCtx) -> Result<Var> {
        self.decode(tape, store, start, None, ctx)
    }

    fn calendar_rows(&self, tape: &mut Tape, batch: &Batch) -> Result<Vec<Var>> {
        let cal = self.calendar_width();
        if cal == 0 {
            return Ok(Vec::new());
        }
        let f = batch
            .future
            .as_ref()
            .ok_or_else(|| crate::Error::Dimension("decoder needs the calendar of the target steps".into()))?;
        let s = f.shape();
        ensure!(
            s.len() == 3 && s[1] >= self.n_o && s[2] == self.width - 1,
            Dimension,
            "future rows {s:?} do not match width {}",
            self.width
        );
        let (b, n, e) = (s[0], s[1], s[2]);
        (0..self.n_o)
            .map(|j| {
                let mut data = Vec::with_capacity(b * cal);
                for i in 0..b {
                    let row = &f.data()[(i * n + j) * e..(i * n + j + 1) * e];
                    data.extend_from_slice(&row[self.temperatures..]);
                }
                Ok(tape.constant(Tensor::matrix(b, cal, data)?))
            })
            .collect()
    }
}

impl Network for EncoderDecoder {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn outputs(&self) -> usize {
        self.n_o
    }

    fn recurrent(&self) -> bool {
        true
    }

    fn forward_with(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, ctx: &mut ForwardCtx) -> Result<Var> {
        let x = input_var(tape, batch, self.rows, self.width)?;
        let (states, context) = self.encode(tape, store, x)?;
        let last = tape.time_slice(x, self.rows - 1, 1)?;
        let last = tape.reshape(last, &[batch.size(), self.width])?;
        let first = tape.slice(last, 0, 1)?;
        let calendar = self.calendar_rows(tape, batch)?;
        let start = DecodeStart {
            states,
            context,
            first,
            calendar: &calendar,
        };
        if ctx.is_train() && self.regime == DecoderRegime::TeacherForced {
            let targets = tape.constant(batch.y.clone());
            self.decode_teacher_forced(tape, store, start, targets, ctx)
        } else {
            self.decode_free_running(tape, store, start, ctx)
        }
    }
}
