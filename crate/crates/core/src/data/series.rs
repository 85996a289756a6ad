use std::collections::HashMap;

use chrono::{Datelike, Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// A load series with optional temperature channels on a shared time axis.
///
/// `missing[t]` marks load values that were absent in the source (their slot
/// in `load` holds a placeholder until imputation); `flagged[t]` marks values
/// filled by the interpolation fallback rather than by slot means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub load: Vec<f64>,
    pub missing: Vec<bool>,
    pub flagged: Vec<bool>,
    pub temperatures: Vec<Vec<f64>>,
    pub temperature_names: Vec<String>,
}

impl TimeSeries {
    /// A complete load-only series.
    pub fn from_load(timestamps: Vec<NaiveDateTime>, load: Vec<f64>) -> Result<Self> {
        ensure!(timestamps.len() == load.len(), Dimension, "{} timestamps for {} values", timestamps.len(), load.len());
        let n = load.len();
        Ok(Self {
            timestamps,
            load,
            missing: vec![false; n],
            flagged: vec![false; n],
            temperatures: Vec::new(),
            temperature_names: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load.is_empty()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.missing.iter().filter(|&&m| m).count() as f64 / self.len() as f64
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    /// Uniform sampling step, or an error if spacing varies.
    pub fn step(&self) -> Result<Duration> {
        ensure!(self.len() >= 2, Data, "need at least two samples to infer spacing");
        let step = self.timestamps[1] - self.timestamps[0];
        ensure!(step > Duration::zero(), Data, "timestamps must be strictly increasing");
        for (i, w) in self.timestamps.windows(2).enumerate() {
            ensure!(w[1] - w[0] == step, Data, "non-uniform spacing at sample {}: {} then {}", i + 1, w[0], w[1]);
        }
        Ok(step)
    }

    /// Observed load values must be non-negative.
    pub fn check_non_negative(&self) -> Result<()> {
        if let Some(i) = self.load.iter().zip(&self.missing).position(|(&v, &m)| !m && v < 0.0) {
            return Err(crate::Error::Data(format!("negative load {} at {}", self.load[i], self.timestamps[i])));
        }
        Ok(())
    }
}

/// Outcome of slot-mean imputation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputeReport {
    pub filled: usize,
    pub fallback: usize,
}

type Slot = (u32, u32, u32, u32);

fn slot(ts: &NaiveDateTime) -> Slot {
    (ts.month(), ts.day(), ts.hour(), ts.minute())
}

/// Fills each missing load value with the mean of the same calendar slot
/// (month, day, hour, minute) over the years where it is observed.
///
/// A slot missing in every year falls back to linear interpolation between
/// the nearest observed neighbours; those values are marked in `flagged`.
pub fn impute_slot_mean(series: &mut TimeSeries) -> Result<ImputeReport> {
    let mut sums: HashMap<Slot, (f64, usize)> = HashMap::new();
    for ((ts, &v), &m) in series.timestamps.iter().zip(&series.load).zip(&series.missing) {
        if !m {
            let e = sums.entry(slot(ts)).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    ensure!(!sums.is_empty(), Data, "series has no observed load values");

    let mut report = ImputeReport::default();
    let mut pending = Vec::new();
    for i in 0..series.len() {
        if !series.missing[i] {
            continue;
        }
        match sums.get(&slot(&series.timestamps[i])) {
            Some(&(s, n)) => {
                series.load[i] = s / n as f64;
                report.filled += 1;
            }
            None => pending.push(i),
        }
    }
    let mut unresolved = vec![false; series.len()];
    pending.iter().for_each(|&i| unresolved[i] = true);
    for &i in &pending {
        let known = |j: usize| !unresolved[j];
        let prev = (0..i).rev().find(|&j| known(j));
        let next = (i + 1..series.len()).find(|&j| known(j));
        series.load[i] = match (prev, next) {
            (Some(a), Some(b)) => {
                let w = (i - a) as f64 / (b - a) as f64;
                series.load[a] * (1.0 - w) + series.load[b] * w
            }
            (Some(a), None) => series.load[a],
            (None, Some(b)) => series.load[b],
            (None, None) => unreachable!("at least one slot is observed"),
        };
        series.flagged[i] = true;
        report.filled += 1;
        report.fallback += 1;
    }
    if report.fallback > 0 {
        log::warn!("{} missing values had no observed slot in any year; interpolated and flagged", report.fallback);
    }
    series.missing.iter_mut().for_each(|m| *m = false);
    Ok(report)
}

/// Mean-aggregates a uniformly spaced series into bins of width `bin`.
///
/// Bins are aligned to multiples of `bin` since midnight; leading samples
/// before the first boundary and a trailing partial bin are dropped. The bin
/// timestamp is its start. Temperatures are averaged the same way and a bin
/// is flagged when any of its samples is.
pub fn resample_mean(series: &TimeSeries, bin: Duration) -> Result<TimeSeries> {
    ensure!(!series.has_missing(), Data, "resampling requires imputed data");
    let step = series.step()?;
    ensure!(
        bin >= step && bin.num_seconds() % step.num_seconds() == 0,
        InvalidArgument,
        "bin {bin} is not a multiple of the sampling step {step}"
    );
    let k = (bin.num_seconds() / step.num_seconds()) as usize;
    let bin_secs = bin.num_seconds();
    let first = series
        .timestamps
        .iter()
        .position(|ts| i64::from(ts.num_seconds_from_midnight()) % bin_secs == 0)
        .ok_or_else(|| crate::Error::Data("no bin boundary in series".into()))?;
    let bins = (series.len() - first) / k;
    ensure!(bins >= 1, Data, "series shorter than one bin");

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut out = TimeSeries {
        timestamps: Vec::with_capacity(bins),
        load: Vec::with_capacity(bins),
        missing: vec![false; bins],
        flagged: Vec::with_capacity(bins),
        temperatures: vec![Vec::with_capacity(bins); series.temperatures.len()],
        temperature_names: series.temperature_names.clone(),
    };
    for b in 0..bins {
        let r = first + b * k..first + (b + 1) * k;
        out.timestamps.push(series.timestamps[r.start]);
        out.load.push(mean(&series.load[r.clone()]));
        out.flagged.push(series.flagged[r.clone()].iter().any(|&f| f));
        for (dst, src) in out.temperatures.iter_mut().zip(&series.temperatures) {
            dst.push(mean(&src[r.clone()]));
        }
    }
    Ok(out)
}
