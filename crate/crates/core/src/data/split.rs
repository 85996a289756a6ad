use std::ops::Range;

use chrono::{Datelike, Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// How a series is divided into train, validation and test spans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Test is the final `test_days`; among the remaining calendar months,
    /// month `m` (zero-based, chronological) goes to validation when
    /// `m % val_every == val_phase`.
    Calendar { test_days: i64, val_every: usize, val_phase: usize },
    /// Chronological tail split for short series: the last `test_days` are
    /// test and the `val_days` before them validation.
    Tail { val_days: i64, test_days: i64 },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Calendar {
            test_days: 365,
            val_every: 5,
            val_phase: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

/// Contiguous index spans of each partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<Range<usize>>,
    pub val: Vec<Range<usize>>,
    pub test: Range<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Split {
    pub fn counts(&self) -> SplitCounts {
        let total = |r: &[Range<usize>]| r.iter().map(|r| r.len()).sum();
        SplitCounts {
            train: total(&self.train),
            val: total(&self.val),
            test: self.test.len(),
        }
    }

    pub fn spans(&self, part: Partition) -> Vec<Range<usize>> {
        match part {
            Partition::Train => self.train.clone(),
            Partition::Validation => self.val.clone(),
            Partition::Test => vec![self.test.clone()],
        }
    }

    pub fn contains(&self, part: Partition, i: usize) -> bool {
        self.spans(part).iter().any(|r| r.contains(&i))
    }
}

fn push_run(spans: &mut Vec<Range<usize>>, i: usize) {
    match spans.last_mut() {
        Some(r) if r.end == i => r.end = i + 1,
        _ => spans.push(i..i + 1),
    }
}

/// Divides a uniformly sampled time axis according to `spec`.
pub fn split(timestamps: &[NaiveDateTime], spec: &SplitSpec) -> Result<Split> {
    ensure!(timestamps.len() >= 2, Data, "series too short to split");
    let step = timestamps[1] - timestamps[0];
    let end = *timestamps.last().unwrap() + step;
    let span = end - timestamps[0];
    let test_start_at = |days: i64| timestamps.partition_point(|t| *t < end - Duration::days(days));

    match *spec {
        SplitSpec::Calendar {
            test_days,
            val_every,
            val_phase,
        } => {
            ensure!(span >= Duration::days(730), Data, "calendar split needs at least 2 years, got {} days", span.num_days());
            ensure!(val_every >= 1 && val_phase < val_every, InvalidArgument, "validation phase must lie in 0..val_every");
            let t0 = test_start_at(test_days);
            let (mut train, mut val) = (Vec::new(), Vec::new());
            let mut month_idx = 0usize;
            let mut current = None;
            for (i, ts) in timestamps[..t0].iter().enumerate() {
                let ym = (ts.year(), ts.month());
                match current {
                    Some(c) if c != ym => {
                        month_idx += 1;
                        current = Some(ym);
                    }
                    None => current = Some(ym),
                    _ => {}
                }
                if month_idx % val_every == val_phase {
                    push_run(&mut val, i);
                } else {
                    push_run(&mut train, i);
                }
            }
            Ok(Split {
                train,
                val,
                test: t0..timestamps.len(),
            })
        }
        SplitSpec::Tail { val_days, test_days } => {
            ensure!(val_days >= 1 && test_days >= 1, InvalidArgument, "tail split needs positive spans");
            ensure!(
                span > Duration::days(val_days + test_days),
                Data,
                "series of {} days too short for {val_days}+{test_days} held-out days",
                span.num_days()
            );
            let t0 = test_start_at(test_days);
            let v0 = test_start_at(test_days + val_days);
            Ok(Split {
                train: vec![0..v0],
                val: vec![v0..t0],
                test: t0..timestamps.len(),
            })
        }
    }
}

/// Window origins whose input and target blocks lie inside one span.
pub fn span_origins(spans: &[Range<usize>], n_t: usize, n_o: usize) -> Vec<usize> {
    spans
        .iter()
        .filter(|r| r.len() >= n_t + n_o)
        .flat_map(|r| r.start..=r.end - n_t - n_o)
        .collect()
}
