use rand::Rng;

use super::glorot_uniform;
use crate::autodiff::{ParamId, ParamKind, ParamStore, Tape, Tensor, Var};
use crate::error::{ensure, Result};

/// Dilated causal 1-D convolution, `f(i) = sum_j x(i - d*j) w(j)`.
///
/// The implicit left zero-padding of `d * (k - 1)` positions keeps the
/// output length equal to the input length.
#[derive(Clone, Debug)]
pub struct CausalConv1D {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub taps: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl CausalConv1D {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        taps: usize,
        dilation: usize,
        in_channels: usize,
        out_channels: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        ensure!(taps >= 1, InvalidArgument, "kernel width must be >= 1");
        ensure!(dilation >= 1, InvalidArgument, "dilation must be >= 1");
        let w = glorot_uniform(rng, &[taps, in_channels, out_channels], taps * in_channels, taps * out_channels);
        let kernel = store.add(format!("{name}.kernel"), ParamKind::Weight, w);
        let bias = bias.then(|| store.add(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(&[out_channels])));
        Ok(Self {
            kernel,
            bias,
            taps,
            dilation,
            in_channels,
            out_channels,
        })
    }

    /// Positions before the current one that feed it, `d * (k - 1)`.
    pub fn padding(&self) -> usize {
        self.dilation * (self.taps - 1)
    }

    /// `x[b, T, C_in] -> [b, T, C_out]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.kernel);
        let y = tape.conv1d(x, w, self.dilation)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                Ok(tape.add_row(y, b)?)
            }
            None => Ok(y),
        }
    }
}

/// Single-channel causal convolution of a plain sequence.
pub fn causal_conv1d(x: &[f64], kernel: &[f64], dilation: usize) -> Result<Vec<f64>> {
    ensure!(!kernel.is_empty(), InvalidArgument, "kernel width must be >= 1");
    ensure!(dilation >= 1, InvalidArgument, "dilation must be >= 1");
    ensure!(!x.is_empty(), InvalidArgument, "empty input sequence");
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::new(vec![1, x.len(), 1], x.to_vec())?);
    let wv = tape.constant(Tensor::new(vec![kernel.len(), 1, 1], kernel.to_vec())?);
    let y = tape.conv1d(xv, wv, dilation)?;
    Ok(tape.value(y).data().to_vec())
}
