use crate::autodiff::{ParamId, ParamKind, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

use super::ForwardCtx;

/// Batch normalization over the batch axis of `x[m, n]`.
///
/// Training mode normalizes with batch statistics and queues a running
/// statistic update `running = momentum * running + (1 - momentum) * batch`
/// on the context. Inference mode uses the running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.99;
    pub const EPS: f64 = 1e-3;

    pub fn new(store: &mut ParamStore, name: &str, n: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), ParamKind::Bias, Tensor::full(&[n], 1.0)),
            beta: store.add(format!("{name}.beta"), ParamKind::Bias, Tensor::zeros(&[n])),
            running_mean: store.add(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros(&[n])),
            running_var: store.add(format!("{name}.running_var"), ParamKind::Buffer, Tensor::full(&[n], 1.0)),
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        if ctx.is_train() {
            let (y, mean, var) = tape.batch_norm(x, gamma, beta, self.eps)?;
            let m = self.momentum;
            let blend = |old: &Tensor, new: &[f64]| {
                let data = old.data().iter().zip(new).map(|(o, b)| m * o + (1.0 - m) * b).collect();
                Tensor::new(old.shape().to_vec(), data)
            };
            ctx.buffer_updates.push((self.running_mean, blend(store.value(self.running_mean), &mean)?));
            ctx.buffer_updates.push((self.running_var, blend(store.value(self.running_var), &var)?));
            Ok(y)
        } else {
            let mean = store.value(self.running_mean).data();
            let shift = Tensor::new(vec![mean.len()], mean.iter().map(|v| -v).collect())?;
            let inv = store.value(self.running_var).data().iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
            let shift = tape.constant(shift);
            let inv = tape.constant(Tensor::new(vec![mean.len()], inv)?);
            let centered = tape.add_row(x, shift)?;
            let normed = tape.mul_row(centered, inv)?;
            let scaled = tape.mul_row(normed, gamma)?;
            Ok(tape.add_row(scaled, beta)?)
        }
    }
}
