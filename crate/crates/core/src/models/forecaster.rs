use std::path::Path;

use rayon::prelude::*;

use super::{infer_batch, ModelSpec, Network, Strategy};
use crate::autodiff::{Tape, Tensor};
use crate::data::{Batch, LoadScaler, Prepared, Samples, WindowSet};
use crate::error::{ensure, Result};
use crate::layers::ForwardCtx;
use crate::metrics::{baseline_seasonal_naive, score, EvalReport, Scores};
use crate::training::{fit, grid_search, repeat_seed, run_repeats, FitReport, GridOutcome, GridSpec, TrainConfig, TrialScore, Validation};

/// One sub-problem of a strategy: windows grown by `extra` rows, targets
/// `offset..offset + len` of the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemberPlan {
    pub extra: usize,
    pub offset: usize,
    pub len: usize,
}

impl MemberPlan {
    pub fn samples(&self, windows: &WindowSet) -> Result<WindowSet> {
        if self.extra > 0 {
            windows.extended(self.extra)
        } else {
            windows.with_target(self.offset, self.len)
        }
    }
}

/// Trained member networks combined by a multi-step strategy.
pub struct Forecaster {
    pub spec: ModelSpec,
    pub n_o: usize,
    pub members: Vec<Box<dyn Network>>,
}

fn run(m: &dyn Network, x: &Tensor, future: Option<&Tensor>) -> Result<Tensor> {
    let b = infer_batch(x.clone(), m.outputs(), future.cloned());
    let mut tape = Tape::new();
    let y = m.forward(&mut tape, &b, &mut ForwardCtx::infer())?;
    Ok(tape.value(y).clone())
}

/// Appends the row `[y_i, future[i, j, ..]]` to every window, dropping the
/// oldest row when `slide` is set.
fn append_rows(x: &Tensor, y: &Tensor, future: Option<&Tensor>, j: usize, slide: bool) -> Result<Tensor> {
    let s = x.shape();
    let (b, r, d) = (s[0], s[1], s[2]);
    let skip = usize::from(slide);
    let r2 = r - skip + 1;
    let mut data = Vec::with_capacity(b * r2 * d);
    for i in 0..b {
        data.extend_from_slice(&x.data()[(i * r + skip) * d..(i + 1) * r * d]);
        data.push(y.data()[i]);
        if d > 1 {
            let f = future.ok_or_else(|| crate::Error::Dimension("exogenous windows need future rows".into()))?;
            let (n_o, e) = (f.shape()[1], f.shape()[2]);
            data.extend_from_slice(&f.data()[(i * n_o + j) * e..(i * n_o + j + 1) * e]);
        }
    }
    Ok(Tensor::new(vec![b, r2, d], data)?)
}

/// One-step model iterated over the horizon, sliding every window; one
/// `[b, 1]` output per step.
fn recursive(m: &dyn Network, batch: &Batch, n_o: usize) -> Result<Vec<Tensor>> {
    let future = batch.future.as_ref();
    let mut x = batch.x.clone();
    let mut out = Vec::with_capacity(n_o);
    for j in 0..n_o {
        let y = run(m, &x, future)?;
        if j + 1 < n_o {
            x = append_rows(&x, &y, future, j, true)?;
        }
        out.push(y);
    }
    Ok(out)
}

/// Scores a one-step member by the RMSE of its recursive forecast over the
/// whole horizon of base windows.
pub struct RecursiveValidation<'a>(pub &'a WindowSet);

impl Validation for RecursiveValidation<'_> {
    fn windows(&self) -> usize {
        Samples::len(self.0)
    }

    fn score(&self, net: &dyn Network, batch_size: usize) -> Result<f64> {
        let w = self.0;
        let idx: Vec<usize> = (0..w.len()).collect();
        let parts: Vec<Result<f64>> = idx
            .par_chunks(batch_size.max(1))
            .map(|c| {
                let b = w.batch(c)?;
                let ys = recursive(net, &b, w.n_o())?;
                let mut sse = 0.0;
                for (i, &k) in c.iter().enumerate() {
                    let t = w.targets(k);
                    sse += ys.iter().zip(&t).map(|(y, t)| (y.data()[i] - t).powi(2)).sum::<f64>();
                }
                Ok(sse)
            })
            .collect();
        let mut sse = 0.0;
        for p in parts {
            sse += p?;
        }
        Ok((sse / (w.len() * w.n_o()) as f64).sqrt())
    }
}

impl Forecaster {
    /// Trainable scalars over all members.
    pub fn n_params(&self) -> usize {
        self.members.iter().map(|m| m.store().num_trainable()).sum()
    }

    /// Forecasts for one batch of base windows, `[b][n_o]` in model units.
    pub fn forecast_batch(&self, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        let b = batch.size();
        let future = batch.future.as_ref();
        let mut out = vec![Vec::with_capacity(self.n_o); b];
        let mut push = |y: &Tensor| {
            let w = y.cols();
            for (i, o) in out.iter_mut().enumerate() {
                o.extend_from_slice(&y.data()[i * w..(i + 1) * w]);
            }
        };
        match self.spec.strategy {
            Strategy::Mimo | Strategy::Direct | Strategy::Dirmo => {
                for m in &self.members {
                    push(&run(m.as_ref(), &batch.x, future)?);
                }
            }
            Strategy::Rec => {
                for y in recursive(self.members[0].as_ref(), batch, self.n_o)? {
                    push(&y);
                }
            }
            Strategy::DirRec => {
                let mut x = batch.x.clone();
                for (k, m) in self.members.iter().enumerate() {
                    let y = run(m.as_ref(), &x, future)?;
                    push(&y);
                    if k + 1 < self.members.len() {
                        x = append_rows(&x, &y, future, k, false)?;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Forecasts for every window, `[N][n_o]` in model units.
    pub fn forecast(&self, windows: &WindowSet, batch_size: usize) -> Result<Vec<Vec<f64>>> {
        ensure!(windows.n_o() == self.n_o, Dimension, "windows have horizon {}, forecaster {}", windows.n_o(), self.n_o);
        ensure!(windows.input_rows() == windows.n_t(), InvalidArgument, "forecast needs base windows");
        let idx: Vec<usize> = (0..windows.len()).collect();
        let parts: Vec<Result<Vec<Vec<f64>>>> = idx
            .par_chunks(batch_size.max(1))
            .map(|c| self.forecast_batch(&windows.batch(c)?))
            .collect();
        let mut out = Vec::with_capacity(windows.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// RMSE of the full multi-step forecast in model units.
    pub fn rmse(&self, windows: &WindowSet, batch_size: usize) -> Result<f64> {
        let f = self.forecast(windows, batch_size)?;
        let y: Vec<Vec<f64>> = (0..windows.len()).map(|i| windows.targets(i)).collect();
        crate::metrics::rmse(&y, &f)
    }

    /// Writes `spec.json` and one parameter file per member into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let spec = serde_json::to_string_pretty(&self.spec).map_err(|e| crate::Error::Config(e.to_string()))?;
        std::fs::write(dir.join("spec.json"), spec)?;
        for (k, m) in self.members.iter().enumerate() {
            m.store().save(&dir.join(format!("member{k}.json")))?;
        }
        Ok(())
    }
}

/// A trained forecaster with its per-member training curves.
pub struct Trained {
    pub forecaster: Forecaster,
    pub reports: Vec<FitReport>,
    /// Multi-step validation RMSE in model units.
    pub val_rmse: f64,
}

/// Trains every member of `spec`'s strategy on the training windows with
/// early stopping on the validation windows. Deterministic in `seed`.
pub fn train_forecaster(spec: &ModelSpec, data: &Prepared, cfg: &TrainConfig, seed: u64) -> Result<Trained> {
    let n_o = data.n_o();
    spec.validate(n_o)?;
    cfg.validate()?;
    ensure!(!data.val.is_empty(), Data, "validation partition is empty");
    let frame = data.train.frame();
    let (width, temps) = (frame.width, frame.temperatures);
    let plans = spec.members(n_o);
    let trained: Vec<Result<(Box<dyn Network>, FitReport)>> = plans
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let train = p.samples(&data.train)?;
            let val = p.samples(&data.val)?;
            let rec_val = RecursiveValidation(&data.val);
            let val: &dyn Validation = if spec.strategy == Strategy::Rec { &rec_val } else { &val };
            let member_seed = repeat_seed(seed, 7919 * k);
            let mut net = spec.build(data.n_t() + p.extra, width, temps, p.len, member_seed)?;
            let mut c = cfg.clone();
            c.seed = member_seed;
            let report = fit(net.as_mut(), &train, Some(val), &c)?;
            Ok((net, report))
        })
        .collect();
    let mut members = Vec::with_capacity(plans.len());
    let mut reports = Vec::with_capacity(plans.len());
    for r in trained {
        let (m, rep) = r?;
        members.push(m);
        reports.push(rep);
    }
    let forecaster = Forecaster {
        spec: spec.clone(),
        n_o,
        members,
    };
    let val_rmse = forecaster.rmse(&data.val, cfg.batch_size)?;
    Ok(Trained {
        forecaster,
        reports,
        val_rmse,
    })
}

/// Scores and original-unit series of one evaluation.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub scores: Scores,
    /// Frame index of the first input row of every window.
    pub origins: Vec<usize>,
    pub truth: Vec<Vec<f64>>,
    pub forecast: Vec<Vec<f64>>,
}

fn original(scaler: &LoadScaler, rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    rows.into_iter().map(|r| r.into_iter().map(|v| scaler.to_original(v)).collect()).collect()
}

fn truth(windows: &WindowSet, scaler: &LoadScaler) -> Vec<Vec<f64>> {
    original(scaler, (0..windows.len()).map(|i| windows.targets(i)).collect())
}

/// Scores a forecaster in original units.
pub fn evaluate(
    f: &Forecaster,
    windows: &WindowSet,
    scaler: &LoadScaler,
    train_range: (f64, f64),
    batch_size: usize,
) -> Result<Evaluation> {
    let forecast = original(scaler, f.forecast(windows, batch_size)?);
    let truth = truth(windows, scaler);
    Ok(Evaluation {
        scores: score(&truth, &forecast, train_range)?,
        origins: windows.origins().to_vec(),
        truth,
        forecast,
    })
}

/// Seasonal-naive forecast of every window, scored in original units.
pub fn evaluate_seasonal_naive(
    windows: &WindowSet,
    period: usize,
    scaler: &LoadScaler,
    train_range: (f64, f64),
) -> Result<Evaluation> {
    let forecast = (0..windows.len())
        .map(|i| {
            let x: Vec<f64> = windows.inputs(i).iter().map(|r| r[0]).collect();
            baseline_seasonal_naive(&x, period, windows.n_o())
        })
        .collect::<Result<Vec<_>>>()?;
    let forecast = original(scaler, forecast);
    let truth = truth(windows, scaler);
    Ok(Evaluation {
        scores: score(&truth, &forecast, train_range)?,
        origins: windows.origins().to_vec(),
        truth,
        forecast,
    })
}

/// Outcome of repeated training followed by one test evaluation each.
pub struct Benchmark {
    pub report: EvalReport,
    pub runs: Vec<(Trained, Evaluation)>,
}

fn report(data: &Prepared, spec: &ModelSpec, runs: &[(Trained, Evaluation)], n_windows: usize) -> EvalReport {
    EvalReport {
        dataset: data.name.clone(),
        model: spec.family.name().into(),
        strategy: spec.strategy.name().into(),
        n_windows,
        train_range: data.train_range,
        runs: runs.iter().map(|(_, e)| e.scores).collect(),
    }
}

/// `cfg.repeats` reseeded trainings of one configuration, each scored on the
/// test windows, which are opened exactly once.
pub fn train_and_test(spec: &ModelSpec, data: &Prepared, cfg: &TrainConfig) -> Result<Benchmark> {
    spec.validate(data.n_o())?;
    cfg.validate()?;
    let test = data.test.open()?;
    let runs = run_repeats(cfg.repeats, cfg.seed, cfg.workers, |_, seed| {
        let t = train_forecaster(spec, data, cfg, seed)?;
        let e = evaluate(&t.forecaster, test, &data.scaler, data.train_range, cfg.batch_size)?;
        Ok((t, e))
    })?;
    Ok(Benchmark {
        report: report(data, spec, &runs, test.len()),
        runs,
    })
}

/// Grid search over `grid` around `spec`/`cfg`; the winner is retrained
/// `cfg.repeats` times and scored on the test windows.
pub fn grid_benchmark(
    spec: &ModelSpec,
    grid: &GridSpec,
    data: &Prepared,
    cfg: &TrainConfig,
) -> Result<(GridOutcome<(Trained, Evaluation)>, EvalReport)> {
    let configure = |p: &crate::training::GridPoint| {
        let s = spec.with_point(p);
        let mut c = cfg.clone();
        if let Some(l) = p.lambda {
            c.lambda = l;
        }
        (s, c)
    };
    for p in grid.points() {
        let (s, c) = configure(&p);
        s.validate(data.n_o())?;
        c.validate()?;
    }
    let outcome = grid_search(
        grid,
        cfg.workers,
        cfg.seed,
        cfg.repeats,
        &data.test,
        |p, seed| {
            let (s, c) = configure(p);
            let t = train_forecaster(&s, data, &c, seed)?;
            Ok(TrialScore {
                val_rmse: t.val_rmse,
                n_params: t.forecaster.n_params(),
            })
        },
        |p, seed, test| {
            let (s, c) = configure(p);
            let t = train_forecaster(&s, data, &c, seed)?;
            let e = evaluate(&t.forecaster, test, &data.scaler, data.train_range, c.batch_size)?;
            Ok((t, e))
        },
    )?;
    let winner = spec.with_point(&outcome.leaderboard[outcome.winner].point);
    let n = data.test.len();
    let rep = report(data, &winner, &outcome.test_runs, n);
    Ok((outcome, rep))
}
