use std::ops::Range;
use std::sync::Arc;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::transform::CalendarEncoder;
use crate::autodiff::Tensor;
use crate::error::{ensure, Result};

/// Model-ready rows on a uniform time axis.
///
/// Row layout is `[load, temperatures.., calendar one-hots..]`. Values are
/// already transformed (log and standardized where configured).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub timestamps: Vec<NaiveDateTime>,
    pub values: Vec<f64>,
    pub width: usize,
    pub temperatures: usize,
}

impl Frame {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        load: &[f64],
        temperatures: &[Vec<f64>],
        calendar: Option<&CalendarEncoder>,
    ) -> Result<Self> {
        let n = timestamps.len();
        ensure!(load.len() == n, Dimension, "{} load values for {n} timestamps", load.len());
        ensure!(temperatures.iter().all(|t| t.len() == n), Dimension, "temperature channel length mismatch");
        let cal = calendar.map_or(0, |c| c.width());
        let width = 1 + temperatures.len() + cal;
        let mut values = Vec::with_capacity(n * width);
        for t in 0..n {
            values.push(load[t]);
            values.extend(temperatures.iter().map(|c| c[t]));
            if let Some(c) = calendar {
                values.extend(c.encode(&timestamps[t]));
            }
        }
        ensure!(values.iter().all(|v| v.is_finite()), Data, "frame contains non-finite values");
        Ok(Self {
            timestamps,
            values,
            width,
            temperatures: temperatures.len(),
        })
    }

    /// Load-only frame.
    pub fn univariate(timestamps: Vec<NaiveDateTime>, load: &[f64]) -> Result<Self> {
        Self::new(timestamps, load, &[], None)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.width..(t + 1) * self.width]
    }

    pub fn load(&self, t: usize) -> f64 {
        self.values[t * self.width]
    }

    pub fn exog_width(&self) -> usize {
        self.width - 1
    }

    pub fn calendar_columns(&self) -> Range<usize> {
        1 + self.temperatures..self.width
    }

    /// Exogenous part of a row for a future step `t`: temperatures frozen at
    /// row `last_observed`, calendar of `t` (known in advance).
    pub fn future_exog(&self, last_observed: usize, t: usize, out: &mut Vec<f64>) {
        let temps = 1..1 + self.temperatures;
        out.extend_from_slice(&self.row(last_observed)[temps]);
        out.extend_from_slice(&self.row(t)[self.calendar_columns()]);
    }
}

/// One supervised pair: `n_T` input rows followed immediately by `n_O` load
/// targets.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub origin: NaiveDateTime,
}

/// Number of stride-1 windows in a series of length `len`.
pub fn window_count(len: usize, n_t: usize, n_o: usize) -> Result<usize> {
    ensure!(n_t >= 1 && n_o >= 1, InvalidArgument, "n_T and n_O must be positive");
    ensure!(n_t + n_o <= len, Data, "series of length {len} shorter than n_T + n_O = {}", n_t + n_o);
    Ok(len - n_t - n_o + 1)
}

/// Materializes every stride-1 window of a frame.
pub fn make_windows(frame: &Frame, n_t: usize, n_o: usize) -> Result<Vec<WindowPair>> {
    let n = window_count(frame.len(), n_t, n_o)?;
    Ok((0..n)
        .map(|o| WindowPair {
            x: (o..o + n_t).map(|t| frame.row(t).to_vec()).collect(),
            y: (o + n_t..o + n_t + n_o).map(|t| frame.load(t)).collect(),
            origin: frame.timestamps[o],
        })
        .collect())
}

/// A batch of windows.
///
/// `x` is `[b, rows, d]`, `y` holds the selected targets `[b, m]`, and
/// `future` (present when the frame has exogenous columns) holds the
/// vectorized exogenous rows of the `n_O` target steps, `[b, n_O, d - 1]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub future: Option<Tensor>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.x.shape()[0]
    }
}

/// Indexable source of training batches.
pub trait Samples: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn input_rows(&self) -> usize;
    fn input_width(&self) -> usize;
    fn horizon(&self) -> usize;
    fn target_len(&self) -> usize;
    fn batch(&self, idx: &[usize]) -> Result<Batch>;
}

/// Windows over a shared frame, gathered lazily.
///
/// A view can select a target block (`offset`, `len`) of the horizon and can
/// extend the input by `extra` rows whose load comes from the true targets
/// and whose exogenous part is vectorized, as the growing-window strategy
/// needs.
#[derive(Clone, Debug)]
pub struct WindowSet {
    frame: Arc<Frame>,
    origins: Arc<Vec<usize>>,
    n_t: usize,
    n_o: usize,
    offset: usize,
    len: usize,
    extra: usize,
}

impl WindowSet {
    pub fn new(frame: Arc<Frame>, origins: Vec<usize>, n_t: usize, n_o: usize) -> Result<Self> {
        ensure!(n_t >= 1 && n_o >= 1, InvalidArgument, "n_T and n_O must be positive");
        if let Some(&o) = origins.iter().max() {
            ensure!(o + n_t + n_o <= frame.len(), Data, "window at {o} runs past the frame end");
        }
        Ok(Self {
            frame,
            origins: Arc::new(origins),
            n_t,
            n_o,
            offset: 0,
            len: n_o,
            extra: 0,
        })
    }

    /// Every stride-1 window of the frame.
    pub fn all(frame: Arc<Frame>, n_t: usize, n_o: usize) -> Result<Self> {
        let n = window_count(frame.len(), n_t, n_o)?;
        Self::new(frame, (0..n).collect(), n_t, n_o)
    }

    pub fn with_target(&self, offset: usize, len: usize) -> Result<Self> {
        ensure!(len >= 1 && offset + len <= self.n_o, InvalidArgument, "target block {offset}+{len} outside horizon {}", self.n_o);
        Ok(Self { offset, len, ..self.clone() })
    }

    /// Input grown by the first `k` true targets; target is step `k`.
    pub fn extended(&self, k: usize) -> Result<Self> {
        ensure!(k < self.n_o, InvalidArgument, "extension {k} outside horizon {}", self.n_o);
        Ok(Self {
            offset: k,
            len: 1,
            extra: k,
            ..self.clone()
        })
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            origins: Arc::new(idx.iter().map(|&i| self.origins[i]).collect()),
            ..self.clone()
        }
    }

    pub fn frame(&self) -> &Arc<Frame> {
        &self.frame
    }

    pub fn origins(&self) -> &[usize] {
        &self.origins
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_o(&self) -> usize {
        self.n_o
    }

    /// Timestamp of the first target step of window `i`.
    pub fn forecast_start(&self, i: usize) -> NaiveDateTime {
        self.frame.timestamps[self.origins[i] + self.n_t]
    }

    /// All `n_O` targets of window `i`.
    pub fn targets(&self, i: usize) -> Vec<f64> {
        let o = self.origins[i] + self.n_t;
        (o..o + self.n_o).map(|t| self.frame.load(t)).collect()
    }

    /// Input rows of window `i` (without extension).
    pub fn inputs(&self, i: usize) -> Vec<Vec<f64>> {
        let o = self.origins[i];
        (o..o + self.n_t).map(|t| self.frame.row(t).to_vec()).collect()
    }

    /// Vectorized row for target step `j` of window `i` carrying `value`.
    pub fn future_row(&self, i: usize, j: usize, value: f64) -> Vec<f64> {
        let o = self.origins[i];
        let mut row = vec![value];
        self.frame.future_exog(o + self.n_t - 1, o + self.n_t + j, &mut row);
        row
    }
}

impl Samples for WindowSet {
    fn len(&self) -> usize {
        self.origins.len()
    }

    fn input_rows(&self) -> usize {
        self.n_t + self.extra
    }

    fn input_width(&self) -> usize {
        self.frame.width
    }

    fn horizon(&self) -> usize {
        self.n_o
    }

    fn target_len(&self) -> usize {
        self.len
    }

    fn batch(&self, idx: &[usize]) -> Result<Batch> {
        ensure!(!idx.is_empty(), InvalidArgument, "empty batch");
        let (d, rows, b) = (self.frame.width, self.input_rows(), idx.len());
        let mut x = Vec::with_capacity(b * rows * d);
        let mut y = Vec::with_capacity(b * self.len);
        let exog = d > 1;
        let mut future = Vec::with_capacity(if exog { b * self.n_o * (d - 1) } else { 0 });
        for &i in idx {
            ensure!(i < self.origins.len(), InvalidArgument, "window index {i} out of range");
            let o = self.origins[i];
            x.extend_from_slice(&self.frame.values[o * d..(o + self.n_t) * d]);
            for j in 0..self.extra {
                x.extend(self.future_row(i, j, self.frame.load(o + self.n_t + j)));
            }
            let t0 = o + self.n_t + self.offset;
            y.extend((t0..t0 + self.len).map(|t| self.frame.load(t)));
            if exog {
                for j in 0..self.n_o {
                    self.frame.future_exog(o + self.n_t - 1, o + self.n_t + j, &mut future);
                }
            }
        }
        Ok(Batch {
            x: Tensor::new(vec![b, rows, d], x)?,
            y: Tensor::new(vec![b, self.len], y)?,
            future: if exog {
                Some(Tensor::new(vec![b, self.n_o, d - 1], future)?)
            } else {
                None
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDate};
    use proptest::prelude::*;

    fn stamps(n: usize) -> Vec<NaiveDateTime> {
        let t0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        (0..n).map(|i| t0 + Duration::hours(i as i64)).collect()
    }

    fn ramp(n: usize) -> Frame {
        let load: Vec<f64> = (0..n).map(|i| i as f64).collect();
        Frame::univariate(stamps(n), &load).unwrap()
    }

    #[test]
    fn ten_four_two_gives_five() {
        let w = make_windows(&ramp(10), 4, 2).unwrap();
        assert_eq!(w.len(), 5);
        assert_eq!(w[4].x.concat(), vec![4.0, 5.0, 6.0, 7.0]);
        assert_eq!(w[4].y, vec![8.0, 9.0]);
    }

    #[test]
    fn exact_length_gives_one() {
        assert_eq!(make_windows(&ramp(6), 4, 2).unwrap().len(), 1);
        assert!(make_windows(&ramp(5), 4, 2).is_err());
    }

    #[test]
    fn targets_follow_inputs() {
        for w in make_windows(&ramp(30), 7, 3).unwrap() {
            assert_eq!(w.y[0], w.x.last().unwrap()[0] + 1.0);
        }
    }

    #[test]
    fn batch_matches_materialized_windows() {
        let f = Arc::new(ramp(20));
        let set = WindowSet::all(f.clone(), 5, 3).unwrap();
        let pairs = make_windows(&f, 5, 3).unwrap();
        let b = set.batch(&[2, 9]).unwrap();
        assert_eq!(b.x.shape(), &[2, 5, 1]);
        assert_eq!(&b.x.data()[..5], pairs[2].x.concat().as_slice());
        assert_eq!(&b.y.data()[3..], pairs[9].y.as_slice());
        assert!(b.future.is_none());
    }

    #[test]
    fn target_views() {
        let set = WindowSet::all(Arc::new(ramp(20)), 5, 4).unwrap();
        let b = set.with_target(2, 2).unwrap().batch(&[0]).unwrap();
        assert_eq!(b.y.data(), &[7.0, 8.0]);
        let e = set.extended(2).unwrap();
        assert_eq!(e.input_rows(), 7);
        let b = e.batch(&[0]).unwrap();
        assert_eq!(b.x.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(b.y.data(), &[7.0]);
        assert!(set.with_target(3, 2).is_err());
    }

    #[test]
    fn future_rows_freeze_temperature() {
        let n = 12;
        let load: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let temp: Vec<f64> = (0..n).map(|i| 100.0 + i as f64).collect();
        let enc = CalendarEncoder::new([2020]).unwrap();
        let f = Arc::new(Frame::new(stamps(n), &load, &[temp], Some(&enc)).unwrap());
        let set = WindowSet::all(f.clone(), 4, 3).unwrap();
        let b = set.batch(&[1]).unwrap();
        let fut = b.future.unwrap();
        let e = f.exog_width();
        assert_eq!(fut.shape(), &[1, 3, e]);
        for j in 0..3 {
            let row = &fut.data()[j * e..(j + 1) * e];
            assert_eq!(row[0], 104.0);
            // hour one-hot of the target step
            assert_eq!(row[1 + 5 + j], 1.0);
        }
    }

    proptest! {
        #[test]
        fn window_count_formula(t in 2usize..400, a in 1usize..100, b in 1usize..100) {
            prop_assume!(a + b <= t);
            let w = make_windows(&ramp(t), a, b).unwrap();
            prop_assert_eq!(w.len(), t - a - b + 1);
        }
    }
}
