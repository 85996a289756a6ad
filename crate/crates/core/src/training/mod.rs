//! Regularized loss, optimizers, the fit loop, repeats and grid search.

mod fit;
mod grid;
mod optim;

pub use crate::data::{Batch, Samples};
pub use fit::{fit, predict, rmse_on, FitReport, TrainConfig, Validation};
pub use grid::{grid_search, repeat_seed, run_repeats, select_winner, GridOutcome, GridPoint, GridSpec, Trial, TrialScore};
pub use optim::{
    adam_step, clip_global_norm, mse_loss_regularized, mse_node, sgd_step, AdamParams, AdamState, Optimizer,
    OptimizerKind,
};
