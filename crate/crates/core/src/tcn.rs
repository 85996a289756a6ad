//! Temporal convolutional network: separate 1x1 input maps for the load and
//! the exogenous channels, a stack of dilated causal residual blocks, and a
//! 1x1 output map whose last `n_O` positions are the forecast.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::data::Batch;
use crate::error::{ensure, Result};
use crate::layers::{dropout, CausalConv1D, ForwardCtx};
use crate::models::{infer_batch, input_var, Network};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcnSpec {
    /// Residual blocks; block `l` uses dilation `2^l`.
    pub layers: usize,
    pub kernel: usize,
    pub filters: usize,
    pub dropout: f64,
}

impl TcnSpec {
    pub fn dilations(&self) -> Vec<usize> {
        (0..self.layers).map(|l| 1usize << l).collect()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.layers >= 1 && self.layers < 32, InvalidArgument, "layers {} outside 1..32", self.layers);
        ensure!(self.kernel >= 1 && self.filters >= 1, InvalidArgument, "kernel and filters must be >= 1");
        ensure!((0.0..1.0).contains(&self.dropout), InvalidArgument, "dropout rate {} outside [0, 1)", self.dropout);
        Ok(())
    }

    pub fn receptive_field(&self) -> Result<usize> {
        receptive_field(self.kernel, &self.dilations())
    }
}

/// Number of distinct input positions feeding the last output position of a
/// stack of causal convolutions with `k` taps and the given dilations,
/// found by walking the dependencies down from the output.
pub fn receptive_field(k: usize, dilations: &[usize]) -> Result<usize> {
    ensure!(k >= 1, InvalidArgument, "kernel width must be >= 1");
    ensure!(!dilations.is_empty(), InvalidArgument, "empty dilation schedule");
    ensure!(dilations.iter().all(|&d| d >= 1), InvalidArgument, "dilations must be >= 1");
    let mut positions = BTreeSet::from([0i64]);
    for &d in dilations.iter().rev() {
        positions = positions
            .iter()
            .flat_map(|&p| (0..k).map(move |j| p - (d * j) as i64))
            .collect();
    }
    Ok(positions.len())
}

/// Dilated causal conv, ReLU and dropout, added to the input (through a 1x1
/// conv when the channel counts differ).
#[derive(Clone, Debug)]
pub struct ResidualConvBlock {
    pub conv: CausalConv1D,
    pub shortcut: Option<CausalConv1D>,
    pub dropout: f64,
}

impl ResidualConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        k: usize,
        dilation: usize,
        cin: usize,
        cout: usize,
        p_drop: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        ensure!((0.0..1.0).contains(&p_drop), InvalidArgument, "dropout rate {p_drop} outside [0, 1)");
        let conv = CausalConv1D::new(store, &format!("{name}.conv"), k, dilation, cin, cout, true, rng)?;
        let shortcut = if cin != cout {
            Some(CausalConv1D::new(store, &format!("{name}.shortcut"), 1, 1, cin, cout, false, rng)?)
        } else {
            None
        };
        Ok(Self {
            conv,
            shortcut,
            dropout: p_drop,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let h = self.conv.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        let h = dropout(tape, h, self.dropout, ctx)?;
        let s = match &self.shortcut {
            Some(c) => c.forward(tape, store, x)?,
            None => x,
        };
        Ok(tape.add(h, s)?)
    }
}

#[derive(Clone, Debug)]
pub struct TcnNet {
    pub store: ParamStore,
    pub spec: TcnSpec,
    pub load_in: CausalConv1D,
    pub exog_in: Option<CausalConv1D>,
    pub blocks: Vec<ResidualConvBlock>,
    pub output: CausalConv1D,
    rows: usize,
    width: usize,
    n_o: usize,
}

impl TcnNet {
    pub fn new(spec: TcnSpec, rows: usize, width: usize, n_o: usize, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        ensure!(n_o >= 1 && n_o <= rows, InvalidArgument, "horizon {n_o} must lie in 1..={rows}");
        let rf = spec.receptive_field()?;
        if rf < rows {
            log::warn!("TCN receptive field {rf} is shorter than the {rows}-step window");
        }
        let m = spec.filters;
        let mut store = ParamStore::new();
        let load_in = CausalConv1D::new(&mut store, "load_in", 1, 1, 1, m, true, rng)?;
        let exog_in = if width > 1 {
            Some(CausalConv1D::new(&mut store, "exog_in", 1, 1, width - 1, m, true, rng)?)
        } else {
            None
        };
        let mut cin = if width > 1 { 2 * m } else { m };
        let mut blocks = Vec::with_capacity(spec.layers);
        for (l, d) in spec.dilations().into_iter().enumerate() {
            blocks.push(ResidualConvBlock::new(&mut store, &format!("block{l}"), spec.kernel, d, cin, m, spec.dropout, rng)?);
            cin = m;
        }
        let output = CausalConv1D::new(&mut store, "output", 1, 1, m, 1, true, rng)?;
        Ok(Self {
            store,
            spec,
            load_in,
            exog_in,
            blocks,
            output,
            rows,
            width,
            n_o,
        })
    }

    /// Output map `[b, T, 1]` over every window position.
    pub fn output_map(&self, tape: &mut Tape, store: &ParamStore, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let load = tape.slice(x, 0, 1)?;
        let mut h = self.load_in.forward(tape, store, load)?;
        if let Some(e) = &self.exog_in {
            let z = tape.slice(x, 1, self.width - 1)?;
            let z = e.forward(tape, store, z)?;
            h = tape.concat(&[h, z])?;
        }
        for b in &self.blocks {
            h = b.forward(tape, store, h, ctx)?;
        }
        self.output.forward(tape, store, h)
    }
}

impl Network for TcnNet {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn outputs(&self) -> usize {
        self.n_o
    }

    fn forward_with(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, ctx: &mut ForwardCtx) -> Result<Var> {
        let x = input_var(tape, batch, self.rows, self.width)?;
        let y = self.output_map(tape, store, x, ctx)?;
        let tail = tape.time_slice(y, self.rows - self.n_o, self.n_o)?;
        Ok(tape.reshape(tail, &[batch.size(), self.n_o])?)
    }
}

/// Inference forecast for one window: loads `x[T]` and optional exogenous
/// rows `z[T][d - 1]`.
pub fn tcn_forward(net: &TcnNet, x: &[f64], z: Option<&[Vec<f64>]>) -> Result<Vec<f64>> {
    let t = x.len();
    let mut rows = Vec::with_capacity(t * net.width);
    match z {
        Some(z) => {
            ensure!(z.len() == t, Dimension, "{} exogenous rows for {t} loads", z.len());
            for (v, e) in x.iter().zip(z) {
                ensure!(e.len() + 1 == net.width, Dimension, "exogenous row of {} values, expected {}", e.len(), net.width - 1);
                rows.push(*v);
                rows.extend_from_slice(e);
            }
        }
        None => {
            ensure!(net.width == 1, Dimension, "network expects {} exogenous channels", net.width - 1);
            rows.extend_from_slice(x);
        }
    }
    let b = infer_batch(Tensor::new(vec![1, t, net.width], rows)?, net.n_o, None);
    let mut tape = Tape::new();
    let y = net.forward(&mut tape, &b, &mut ForwardCtx::infer())?;
    Ok(tape.value(y).data().to_vec())
}
