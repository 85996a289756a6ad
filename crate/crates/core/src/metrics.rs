//! Forecast accuracy metrics, repeat aggregation and the seasonal-naive
//! reference forecast.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

fn check_shapes(y: &[Vec<f64>], yhat: &[Vec<f64>]) -> Result<usize> {
    ensure!(!y.is_empty(), InvalidArgument, "no windows to score");
    ensure!(y.len() == yhat.len(), Dimension, "{} truth windows vs {} forecasts", y.len(), yhat.len());
    let n_o = y[0].len();
    ensure!(n_o > 0, InvalidArgument, "empty horizon");
    for (i, (a, b)) in y.iter().zip(yhat).enumerate() {
        ensure!(a.len() == n_o && b.len() == n_o, Dimension, "window {i} has horizon {} / {}, expected {n_o}", a.len(), b.len());
        ensure!(a.iter().chain(b).all(|v| v.is_finite()), InvalidArgument, "non-finite value in window {i}");
    }
    Ok(n_o)
}

/// Root of the grand mean of squared errors over all windows and steps.
pub fn rmse(y: &[Vec<f64>], yhat: &[Vec<f64>]) -> Result<f64> {
    let n_o = check_shapes(y, yhat)?;
    let sse: f64 = y.iter().zip(yhat).flat_map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).powi(2))).sum();
    Ok((sse / (y.len() * n_o) as f64).sqrt())
}

/// Grand mean of absolute errors.
pub fn mae(y: &[Vec<f64>], yhat: &[Vec<f64>]) -> Result<f64> {
    let n_o = check_shapes(y, yhat)?;
    let sae: f64 = y.iter().zip(yhat).flat_map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs())).sum();
    Ok(sae / (y.len() * n_o) as f64)
}

/// `100 * rmse / (y_max - y_min)` with the range of the training targets.
pub fn nrmse_pct(rmse: f64, y_max: f64, y_min: f64) -> Result<f64> {
    ensure!(y_max > y_min, InvalidArgument, "degenerate target range [{y_min}, {y_max}]");
    Ok(100.0 * rmse / (y_max - y_min))
}

/// Mean over windows of `1 - RSS_i / TSS_i` around each window's own mean.
///
/// A window with `TSS_i = 0` contributes 1 when its forecast is exact and 0
/// otherwise.
pub fn r2(y: &[Vec<f64>], yhat: &[Vec<f64>]) -> Result<f64> {
    check_shapes(y, yhat)?;
    let total: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| {
            let mean = a.iter().sum::<f64>() / a.len() as f64;
            let rss: f64 = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum();
            let tss: f64 = a.iter().map(|u| (u - mean).powi(2)).sum();
            match (tss == 0.0, rss == 0.0) {
                (false, _) => 1.0 - rss / tss,
                (true, true) => 1.0,
                (true, false) => 0.0,
            }
        })
        .sum();
    Ok(total / y.len() as f64)
}

/// Repeats the last observed season: step `j` takes the value `p` steps
/// before its position, reusing earlier forecasts when `j >= p`.
pub fn baseline_seasonal_naive(x: &[f64], period: usize, n_o: usize) -> Result<Vec<f64>> {
    ensure!(period >= 1, InvalidArgument, "period must be positive");
    ensure!(period <= x.len(), InvalidArgument, "period {period} longer than the window ({})", x.len());
    let base = x.len() - period;
    Ok((0..n_o).map(|j| x[base + j % period]).collect())
}

/// The four scores of one forecast run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub rmse: f64,
    pub mae: f64,
    pub nrmse: f64,
    pub r2: f64,
}

pub fn score(y: &[Vec<f64>], yhat: &[Vec<f64>], train_range: (f64, f64)) -> Result<Scores> {
    let r = rmse(y, yhat)?;
    Ok(Scores {
        rmse: r,
        mae: mae(y, yhat)?,
        nrmse: nrmse_pct(r, train_range.1, train_range.0)?,
        r2: r2(y, yhat)?,
    })
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len();
    if n == 0 {
        return Aggregate { mean: f64::NAN, std: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Aggregate { mean, std }
}

/// Scores of repeated trainings of one model on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model: String,
    pub strategy: String,
    pub n_windows: usize,
    pub train_range: (f64, f64),
    pub runs: Vec<Scores>,
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub model: String,
    pub strategy: String,
    pub rmse: f64,
    pub rmse_std: f64,
    pub mae: f64,
    pub mae_std: f64,
    pub nrmse: f64,
    pub nrmse_std: f64,
    pub r2: f64,
    pub r2_std: f64,
    pub repeats: usize,
    pub n_windows: usize,
    pub range_min: f64,
    pub range_max: f64,
}

impl EvalReport {
    pub fn summary(&self) -> [Aggregate; 4] {
        let col = |f: fn(&Scores) -> f64| aggregate(&self.runs.iter().map(f).collect::<Vec<_>>());
        [col(|s| s.rmse), col(|s| s.mae), col(|s| s.nrmse), col(|s| s.r2)]
    }

    pub fn row(&self) -> ReportRow {
        let [rmse, mae, nrmse, r2] = self.summary();
        ReportRow {
            dataset: self.dataset.clone(),
            model: self.model.clone(),
            strategy: self.strategy.clone(),
            rmse: rmse.mean,
            rmse_std: rmse.std,
            mae: mae.mean,
            mae_std: mae.std,
            nrmse: nrmse.mean,
            nrmse_std: nrmse.std,
            r2: r2.mean,
            r2_std: r2.std,
            repeats: self.runs.len(),
            n_windows: self.n_windows,
            range_min: self.train_range.0,
            range_max: self.train_range.1,
        }
    }
}

pub fn write_rows(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::Error::Io(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| crate::Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| crate::Error::Io(e.into()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| crate::Error::Parse { line: e.position().map_or(0, |p| p.line() as usize), msg: e.to_string() }))
        .collect()
}
