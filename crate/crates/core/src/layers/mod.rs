//! Feed-forward building blocks.

mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod residual;

pub use batchnorm::BatchNorm;
pub use conv::{causal_conv1d, CausalConv1D};
pub use dense::{dense_forward, DenseLayer};
pub use dropout::dropout;
pub use residual::ResidualBlock2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, ParamId, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var, AdError> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Relu => tape.relu(x),
        }
    }

    pub fn eval(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::Relu => v.max(0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-forward-pass state: mode, dropout RNG, and running-statistic updates
/// produced by batch normalization in training mode.
#[derive(Debug)]
pub struct ForwardCtx {
    pub mode: Mode,
    pub rng: ChaCha8Rng,
    pub buffer_updates: Vec<(ParamId, Tensor)>,
}

impl ForwardCtx {
    pub fn train(seed: u64) -> Self {
        Self {
            mode: Mode::Train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            buffer_updates: Vec::new(),
        }
    }

    pub fn infer() -> Self {
        Self {
            mode: Mode::Infer,
            rng: ChaCha8Rng::seed_from_u64(0),
            buffer_updates: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }
}

/// Uniform Glorot initialization for a `fan_in x fan_out` map.
pub fn glorot_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite init")
}

/// Random `n x n` orthogonal matrix (Gram-Schmidt on a Gaussian draw).
pub fn orthogonal(rng: &mut impl Rng, n: usize) -> Tensor {
    loop {
        let mut m: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                for k in 0..n {
                    m[i * n + k] -= dot * m[j * n + k];
                }
            }
            let norm = (0..n).map(|k| m[i * n + k].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            (0..n).for_each(|k| m[i * n + k] /= norm);
        }
        if ok {
            return Tensor::new(vec![n, n], m).expect("finite init");
        }
    }
}

/// Appends a column of ones to `x[.., n]`.
pub(crate) fn with_ones(tape: &mut Tape, x: Var) -> Result<Var, AdError> {
    let mut shape = tape.shape(x).to_vec();
    *shape.last_mut().unwrap() = 1;
    let ones = tape.constant(Tensor::full(&shape, 1.0));
    tape.concat(&[x, ones])
}
