use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::models::RnnNetwork;
use crate::training::{fit, FitReport, Samples, TrainConfig, Validation};

/// Truncated backpropagation through time, TBPTT(`backward_steps`, `forward_steps`).
///
/// Each window is an independent sequence whose loss is attached to its last
/// step. Gradients flow back through the last `backward_steps` steps only:
/// the recurrent state entering step `n_T - backward_steps` is detached.
/// Because the loss sits at the end of the window, the end of the window is
/// the only point where an update can happen, so any `forward_steps` in
/// `1..=n_T` yields one update per window batch; the epoch-wise setting is
/// `TBPTT(n_T, n_T)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tbptt {
    pub backward_steps: usize,
    pub forward_steps: usize,
}

impl Tbptt {
    pub fn epoch_wise(n_t: usize) -> Self {
        Self {
            backward_steps: n_t,
            forward_steps: n_t,
        }
    }

    pub fn validate(&self, n_t: usize) -> Result<()> {
        ensure!(
            (1..=n_t).contains(&self.backward_steps),
            InvalidArgument,
            "tau_b = {} outside 1..={n_t}",
            self.backward_steps
        );
        ensure!(self.forward_steps >= 1, InvalidArgument, "tau_f must be >= 1");
        Ok(())
    }

    /// Step index whose incoming state is detached, if any.
    pub fn truncation_point(&self, n_t: usize) -> Option<usize> {
        (self.backward_steps < n_t).then(|| n_t - self.backward_steps)
    }
}

/// Trains a recurrent forecaster with TBPTT on the given windows.
pub fn tbptt_train(
    model: &mut RnnNetwork,
    windows: &dyn Samples,
    validation: Option<&dyn Validation>,
    tbptt: Tbptt,
    config: &TrainConfig,
) -> Result<FitReport> {
    tbptt.validate(windows.input_rows())?;
    model.tbptt = Some(tbptt);
    fit(model, windows, validation, config)
}
