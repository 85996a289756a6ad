//! Trainable forecasting networks and their assembly from a model spec.

mod feedforward;
mod forecaster;
mod rnn;

pub use feedforward::{DfnnNet, FnnNet};
pub use forecaster::{
    evaluate, evaluate_seasonal_naive, grid_benchmark, train_and_test, train_forecaster, Benchmark, Evaluation, Forecaster,
    MemberPlan, RecursiveValidation, Trained,
};
pub use rnn::RnnNetwork;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_diff_check_params, ParamStore, Tape, Tensor, Var};
use crate::data::Batch;
use crate::error::{ensure, Result};
use crate::layers::ForwardCtx;
use crate::recurrent::{CellKind, Tbptt};
use crate::seq2seq::{DecoderRegime, EncoderDecoder};
use crate::strategies::{dirmo_blocks, dirmo_width};
use crate::tcn::{TcnNet, TcnSpec};
use crate::training::GridPoint;

/// A differentiable map from a batch of windows to `[b, outputs]`.
pub trait Network: Send + Sync {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn outputs(&self) -> usize;
    /// Recurrent networks get gradient clipping by default.
    fn recurrent(&self) -> bool {
        false
    }
    /// Forward pass reading parameters from `store`, which must share the
    /// layout of [`Network::store`].
    fn forward_with(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch, ctx: &mut ForwardCtx) -> Result<Var>;

    fn forward(&self, tape: &mut Tape, batch: &Batch, ctx: &mut ForwardCtx) -> Result<Var> {
        self.forward_with(self.store(), tape, batch, ctx)
    }
}

/// Finite-difference check of the batch MSE with respect to every trainable
/// parameter. Training mode uses the same dropout mask for every evaluation.
pub fn network_grad_check(net: &dyn Network, batch: &Batch, train_seed: Option<u64>, eps: f64, stride: usize) -> Result<f64> {
    finite_diff_check_params(
        net.store(),
        |tape: &mut Tape, store: &ParamStore| -> Result<Var> {
            let mut ctx = train_seed.map_or_else(ForwardCtx::infer, ForwardCtx::train);
            let y = net.forward_with(store, tape, batch, &mut ctx)?;
            let t = tape.constant(batch.y.clone());
            crate::training::mse_node(tape, y, t)
        },
        eps,
        stride,
    )
}

/// Checks `batch.x` against the `[_, rows, width]` a network was built for
/// and records it on the tape.
pub(crate) fn input_var(tape: &mut Tape, batch: &Batch, rows: usize, width: usize) -> Result<Var> {
    let s = batch.x.shape();
    ensure!(
        s.len() == 3 && s[1] == rows && s[2] == width,
        Dimension,
        "network expects windows of {rows} x {width}, got {s:?}"
    );
    Ok(tape.constant(batch.x.clone()))
}

/// `[b, rows, d]` sequence as one `[b, d]` var per step.
pub(crate) fn steps(tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
    let s = tape.shape(x).to_vec();
    (0..s[1])
        .map(|t| {
            let v = tape.time_slice(x, t, 1)?;
            Ok(tape.reshape(v, &[s[0], s[2]])?)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Fnn,
    Dfnn,
    Ernn,
    Lstm,
    Gru,
    Seq2seqTf,
    Seq2seqSg,
    Tcn,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Fnn => "fnn",
            Family::Dfnn => "dfnn",
            Family::Ernn => "ernn",
            Family::Lstm => "lstm",
            Family::Gru => "gru",
            Family::Seq2seqTf => "seq2seq-tf",
            Family::Seq2seqSg => "seq2seq-sg",
            Family::Tcn => "tcn",
        }
    }

    fn cell(self) -> Option<CellKind> {
        match self {
            Family::Ernn => Some(CellKind::Ernn),
            Family::Lstm => Some(CellKind::Lstm),
            Family::Gru => Some(CellKind::Gru),
            _ => None,
        }
    }

    /// Families whose architecture fixes the multi-step scheme.
    pub fn builtin_mimo(self) -> bool {
        matches!(self, Family::Seq2seqTf | Family::Seq2seqSg | Family::Tcn)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Rec,
    Direct,
    DirRec,
    #[default]
    Mimo,
    Dirmo,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Rec => "rec",
            Strategy::Direct => "direct",
            Strategy::DirRec => "dirrec",
            Strategy::Mimo => "mimo",
            Strategy::Dirmo => "dirmo",
        }
    }
}

fn default_layers() -> usize {
    1
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

fn default_kernel() -> usize {
    2
}

fn default_filters() -> usize {
    32
}

fn default_cell() -> CellKind {
    CellKind::Gru
}

/// Architecture and strategy of one forecaster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Width per layer, or one width shared by all layers.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dropout: f64,
    /// TCN kernel width.
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    /// TCN filters per layer.
    #[serde(default = "default_filters")]
    pub filters: usize,
    /// Encoder and decoder cell of seq2seq models.
    #[serde(default = "default_cell")]
    pub cell: CellKind,
    /// Block size for DIRMO.
    #[serde(default)]
    pub dirmo_block: Option<usize>,
    #[serde(default)]
    pub tbptt: Option<Tbptt>,
}

impl ModelSpec {
    pub fn new(family: Family, strategy: Strategy, layers: usize, hidden: usize) -> Self {
        Self {
            family,
            strategy,
            layers,
            hidden: vec![hidden],
            dropout: 0.0,
            kernel: default_kernel(),
            filters: default_filters(),
            cell: default_cell(),
            dirmo_block: None,
            tbptt: None,
        }
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.family.name(), self.strategy.name())
    }

    /// Hidden width of every layer.
    pub fn widths(&self) -> Result<Vec<usize>> {
        ensure!(self.layers >= 1, Config, "layers must be >= 1");
        ensure!(self.hidden.iter().all(|&h| h >= 1), Config, "hidden widths must be >= 1");
        match self.hidden.len() {
            1 => Ok(vec![self.hidden[0]; self.layers]),
            n if n == self.layers => Ok(self.hidden.clone()),
            n => Err(crate::Error::Config(format!("{n} hidden widths for {} layers", self.layers))),
        }
    }

    pub fn validate(&self, n_o: usize) -> Result<()> {
        self.widths()?;
        ensure!((0.0..1.0).contains(&self.dropout), Config, "dropout {} outside [0, 1)", self.dropout);
        ensure!(
            !self.family.builtin_mimo() || self.strategy == Strategy::Mimo,
            Config,
            "{} forecasts the whole horizon at once; strategy must be mimo",
            self.family.name()
        );
        if self.strategy == Strategy::Dirmo {
            let s = self.dirmo_block.ok_or_else(|| crate::Error::Config("dirmo needs dirmo_block".into()))?;
            dirmo_blocks(n_o, s).map_err(|e| crate::Error::Config(e.to_string()))?;
        }
        if self.family == Family::Tcn {
            ensure!(self.kernel >= 1 && self.filters >= 1, Config, "kernel and filters must be >= 1");
        }
        ensure!(
            self.tbptt.is_none() || self.family.cell().is_some(),
            Config,
            "tbptt applies to ernn, lstm and gru models only"
        );
        Ok(())
    }

    /// Copy with a grid point's overrides applied.
    pub fn with_point(&self, p: &GridPoint) -> Self {
        let mut s = self.clone();
        if let Some(l) = p.layers {
            s.layers = l;
            if s.hidden.len() != 1 && s.hidden.len() != l {
                s.hidden.truncate(1);
            }
        }
        if let Some(h) = p.hidden {
            s.hidden = vec![h];
        }
        if let Some(d) = p.dropout {
            s.dropout = d;
        }
        if let Some(k) = p.kernel {
            s.kernel = k;
        }
        if let Some(m) = p.filters {
            s.filters = m;
        }
        s
    }

    /// Sub-problems trained for this strategy over a horizon of `n_o`.
    pub fn members(&self, n_o: usize) -> Vec<MemberPlan> {
        let one = |extra, offset| MemberPlan { extra, offset, len: 1 };
        match self.strategy {
            Strategy::Rec => vec![one(0, 0)],
            Strategy::Direct => (0..n_o).map(|k| one(0, k)).collect(),
            Strategy::DirRec => (0..n_o).map(|k| one(k, k)).collect(),
            Strategy::Mimo => vec![MemberPlan { extra: 0, offset: 0, len: n_o }],
            Strategy::Dirmo => {
                let s = self.dirmo_block.unwrap_or(n_o).clamp(1, n_o);
                (0..n_o.div_ceil(s))
                    .map(|j| MemberPlan {
                        extra: 0,
                        offset: j * s,
                        len: dirmo_width(n_o, s, j),
                    })
                    .collect()
            }
        }
    }

    /// Builds one member network for windows of `rows x width` whose first
    /// `temperatures` exogenous columns are temperatures.
    pub fn build(&self, rows: usize, width: usize, temperatures: usize, outputs: usize, seed: u64) -> Result<Box<dyn Network>> {
        let widths = self.widths()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match self.family {
            Family::Fnn => Box::new(FnnNet::new(rows, width, &widths, outputs, self.dropout, &mut rng)?),
            Family::Dfnn => Box::new(DfnnNet::new(rows, width, widths[0], self.layers, outputs, self.dropout, &mut rng)?),
            Family::Ernn | Family::Lstm | Family::Gru => {
                let kind = self.family.cell().expect("recurrent family");
                let mut net = RnnNetwork::new(kind, rows, width, &widths, outputs, self.dropout, &mut rng)?;
                if let Some(t) = self.tbptt {
                    t.validate(rows)?;
                    net.tbptt = Some(t);
                }
                Box::new(net)
            }
            Family::Seq2seqTf | Family::Seq2seqSg => {
                let regime = if self.family == Family::Seq2seqTf {
                    DecoderRegime::TeacherForced
                } else {
                    DecoderRegime::SelfGenerated
                };
                Box::new(EncoderDecoder::new(
                    self.cell,
                    rows,
                    width,
                    temperatures,
                    &widths,
                    outputs,
                    regime,
                    self.dropout,
                    &mut rng,
                )?)
            }
            Family::Tcn => {
                let spec = TcnSpec {
                    layers: self.layers,
                    kernel: self.kernel,
                    filters: self.filters,
                    dropout: self.dropout,
                };
                Box::new(TcnNet::new(spec, rows, width, outputs, &mut rng)?)
            }
        })
    }
}

/// Zero-filled targets for inference-only batches.
pub(crate) fn infer_batch(x: Tensor, outputs: usize, future: Option<Tensor>) -> Batch {
    let b = x.shape()[0];
    Batch {
        x,
        y: Tensor::zeros(&[b, outputs]),
        future,
    }
}
