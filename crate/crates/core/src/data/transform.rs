use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// `ln(1 + x)` elementwise.
pub fn log_transform(values: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = values.iter().find(|&&v| !(v >= 0.0)) {
        return Err(crate::Error::Data(format!("log transform needs non-negative input, got {v}")));
    }
    Ok(values.iter().map(|v| v.ln_1p()).collect())
}

/// `exp(y) - 1` elementwise.
pub fn inverse_log(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.exp_m1()).collect()
}

/// Per-channel `(x - mean) / std` with statistics from training data only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    /// Fits on the given training values (population standard deviation).
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a f64>) -> Result<Self> {
        let values: Vec<f64> = train.into_iter().copied().collect();
        ensure!(!values.is_empty(), Data, "no training values to standardize with");
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        ensure!(std > 1e-12 * mean.abs().max(1.0), Data, "training channel is constant (std = 0)");
        Ok(Self { mean, std })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn forward(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn inverse(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.invert(v)).collect()
    }
}

/// Maps standardized load back to original units: inverse standardization,
/// then `exp(y) - 1` when the log transform was applied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadScaler {
    pub log: bool,
    pub standardizer: Standardizer,
}

impl LoadScaler {
    pub fn to_model(&self, v: f64) -> f64 {
        let v = if self.log { v.ln_1p() } else { v };
        self.standardizer.apply(v)
    }

    pub fn to_original(&self, z: f64) -> f64 {
        let v = self.standardizer.invert(z);
        if self.log {
            v.exp_m1()
        } else {
            v
        }
    }
}

/// K-dimensional indicator vector with a one at `value`.
pub fn one_hot(value: usize, k: usize) -> Result<Vec<f64>> {
    ensure!(value < k, InvalidArgument, "one-hot value {value} outside 0..{k}");
    let mut v = vec![0.0; k];
    v[value] = 1.0;
    Ok(v)
}

/// Calendar encoding: hour (24), day of month (31), month (12) and year
/// (one slot per distinct training year).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarEncoder {
    pub years: Vec<i32>,
}

impl CalendarEncoder {
    pub fn new(train_years: impl IntoIterator<Item = i32>) -> Result<Self> {
        let mut years: Vec<i32> = train_years.into_iter().collect();
        years.sort_unstable();
        years.dedup();
        ensure!(!years.is_empty(), Data, "calendar encoder needs at least one training year");
        Ok(Self { years })
    }

    pub fn width(&self) -> usize {
        24 + 31 + 12 + self.years.len()
    }

    /// Year index; years outside the training span map to the nearest
    /// earlier seen year (or the first one).
    fn year_index(&self, year: i32) -> usize {
        match self.years.binary_search(&year) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    pub fn encode(&self, ts: &NaiveDateTime) -> Vec<f64> {
        let mut v = vec![0.0; self.width()];
        v[ts.hour() as usize] = 1.0;
        v[24 + ts.day0() as usize] = 1.0;
        v[55 + ts.month0() as usize] = 1.0;
        v[67 + self.year_index(ts.year())] = 1.0;
        v
    }

    pub fn unseen_years<'a>(&self, ts: impl IntoIterator<Item = &'a NaiveDateTime>) -> Vec<i32> {
        let mut out: Vec<i32> = ts.into_iter().map(|t| t.year()).filter(|y| self.years.binary_search(y).is_err()).collect();
        out.dedup();
        out
    }
}
