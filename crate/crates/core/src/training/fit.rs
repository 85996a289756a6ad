use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{clip_global_norm, mse_node, Optimizer, OptimizerKind};
use crate::autodiff::{AdError, Tape};
use crate::data::{Batch, Samples};
use crate::error::{ensure, Error, Result};
use crate::layers::ForwardCtx;
use crate::models::Network;

/// Optimization settings shared by every model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// L2 strength.
    pub lambda: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Global gradient-norm cap; recurrent models default to 5.
    pub clip_norm: Option<f64>,
    /// Caps the number of minibatches drawn per epoch.
    pub max_batches_per_epoch: Option<usize>,
    /// Worker threads for repeats and grid points (0 = all cores).
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            repeats: 10,
            seed: 0,
            clip_norm: None,
            max_batches_per_epoch: None,
            workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lambda >= 0.0 && self.lambda.is_finite(), Config, "lambda must be >= 0");
        ensure!(self.repeats >= 1, Config, "repeats must be >= 1");
        ensure!(self.batch_size >= 1, Config, "batch size must be >= 1");
        ensure!(self.learning_rate > 0.0 && self.learning_rate.is_finite(), Config, "learning rate must be > 0");
        ensure!(self.patience >= 1, Config, "patience must be >= 1");
        if let Some(c) = self.clip_norm {
            ensure!(c > 0.0, Config, "clip norm must be > 0");
        }
        Ok(())
    }
}

/// Per-epoch curves of one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train_loss: Vec<f64>,
    /// Validation RMSE in model units (train loss when no validation data).
    pub val_rmse: Vec<f64>,
    /// Epoch (1-based) whose parameters were kept; 0 means initialization.
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub clipped_steps: usize,
}

fn as_divergence(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::Autodiff(AdError::NonFinite { .. }) | Error::Divergence(_) => {
            Error::Divergence(format!("epoch {epoch}, batch {batch}: {e}"))
        }
        other => other,
    }
}

fn train_step(
    net: &mut dyn Network,
    batch: &Batch,
    opt: &mut Optimizer,
    cfg: &TrainConfig,
    clip: Option<f64>,
    seed: u64,
) -> Result<(f64, bool)> {
    let mut tape = Tape::new();
    let mut ctx = ForwardCtx::train(seed);
    let pred = net.forward(&mut tape, batch, &mut ctx)?;
    ensure!(
        tape.shape(pred) == batch.y.shape(),
        Dimension,
        "network output {:?} does not match targets {:?}",
        tape.shape(pred),
        batch.y.shape()
    );
    let target = tape.constant(batch.y.clone());
    let loss = mse_node(&mut tape, pred, target)?;
    tape.backward_scalar(loss)?;
    let store = net.store_mut();
    let value = tape.value(loss).data()[0] + cfg.lambda * store.l2_norm_sq();
    store.zero_grad();
    tape.accumulate_into(store);
    store.add_l2_grad(cfg.lambda);
    let clipped = match clip.and_then(|c| clip_global_norm(store, c)) {
        Some(norm) => {
            log::debug!("gradient norm {norm:.3} clipped");
            true
        }
        None => false,
    };
    opt.step(store)?;
    for (id, t) in ctx.buffer_updates {
        store.set(id, t)?;
    }
    Ok((value, clipped))
}

/// Early-stopping score of a network, lower is better.
pub trait Validation: Sync {
    /// Number of windows scored.
    fn windows(&self) -> usize;
    fn score(&self, net: &dyn Network, batch_size: usize) -> Result<f64>;
}

impl<S: Samples> Validation for S {
    fn windows(&self) -> usize {
        Samples::len(self)
    }

    fn score(&self, net: &dyn Network, batch_size: usize) -> Result<f64> {
        rmse_on(net, self, batch_size)
    }
}

/// Minimizes the regularized MSE on `train`, keeping the parameters of the
/// epoch with the lowest validation RMSE. Fully determined by `cfg.seed` and
/// the network's initial parameters.
pub fn fit(net: &mut dyn Network, train: &dyn Samples, val: Option<&dyn Validation>, cfg: &TrainConfig) -> Result<FitReport> {
    cfg.validate()?;
    ensure!(!train.is_empty(), Data, "no training windows");
    ensure!(
        train.target_len() == net.outputs(),
        Dimension,
        "network has {} outputs, targets have {}",
        net.outputs(),
        train.target_len()
    );
    let val = val.filter(|v| v.windows() > 0);
    let clip = cfg.clip_norm.or_else(|| net.recurrent().then_some(5.0));
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, net.store())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = FitReport {
        best_val_rmse: f64::INFINITY,
        ..FitReport::default()
    };
    let mut best_store = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut batches, mut clipped) = (0.0, 0usize, 0usize);
        let limit = cfg.max_batches_per_epoch.unwrap_or(usize::MAX);
        for (bi, chunk) in order.chunks(cfg.batch_size).take(limit).enumerate() {
            let batch = train.batch(chunk)?;
            let (loss, c) = train_step(net, &batch, &mut opt, cfg, clip, rng.gen())
                .map_err(|e| as_divergence(epoch, bi, e))?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("epoch {epoch}, batch {bi}: loss {loss}")));
            }
            sum += loss;
            batches += 1;
            clipped += usize::from(c);
        }
        if clipped > 0 {
            log::info!("epoch {epoch}: gradient clipping active on {clipped}/{batches} steps");
        }
        report.clipped_steps += clipped;
        let train_loss = sum / batches as f64;
        let score = match val {
            Some(v) => v.score(net, cfg.batch_size).map_err(|e| as_divergence(epoch, 0, e))?,
            None => train_loss,
        };
        ensure!(score.is_finite(), Divergence, "epoch {epoch}: validation score {score}");
        report.train_loss.push(train_loss);
        report.val_rmse.push(score);
        if score < report.best_val_rmse {
            report.best_val_rmse = score;
            report.best_epoch = epoch + 1;
            best_store = Some(net.store().clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if let Some(s) = best_store {
        *net.store_mut() = s;
    }
    Ok(report)
}

/// Inference-mode outputs for every window, in order.
pub fn predict(net: &dyn Network, samples: &dyn Samples, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let chunks: Vec<Result<Vec<Vec<f64>>>> = idx
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let batch = samples.batch(chunk)?;
            let mut tape = Tape::new();
            let out = net.forward(&mut tape, &batch, &mut ForwardCtx::infer())?;
            let v = tape.value(out);
            Ok(v.data().chunks(v.cols()).map(<[f64]>::to_vec).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(samples.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// RMSE of the network's direct outputs against the sample targets.
pub fn rmse_on(net: &dyn Network, samples: &dyn Samples, batch_size: usize) -> Result<f64> {
    let pred = predict(net, samples, batch_size)?;
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut sse = 0.0;
    let mut n = 0usize;
    for (chunk, p) in idx.chunks(batch_size.max(1)).zip(pred.chunks(batch_size.max(1))) {
        let y = samples.batch(chunk)?.y;
        for (t, row) in y.data().chunks(y.cols()).zip(p) {
            sse += t.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            n += t.len();
        }
    }
    Ok((sse / n as f64).sqrt())
}
