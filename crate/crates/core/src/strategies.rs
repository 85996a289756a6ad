//! Multi-step forecasting strategies over generic predictors.
//!
//! A window is a slice of rows `[load, exogenous..]`. When a strategy appends
//! an estimate to a window it asks a `vectorize(step, estimate)` callback for
//! the full row; [`univariate`] is the load-only choice.

use crate::error::{ensure, Result};

/// Maps a window to the next value.
pub trait OneStepPredictor {
    fn predict(&self, window: &[Vec<f64>]) -> Result<f64>;

    /// Window length the predictor was built for, when fixed.
    fn input_len(&self) -> Option<usize> {
        None
    }
}

impl<F: Fn(&[Vec<f64>]) -> f64> OneStepPredictor for F {
    fn predict(&self, window: &[Vec<f64>]) -> Result<f64> {
        Ok(self(window))
    }
}

/// Maps a window to a block of `width()` consecutive values.
pub trait BlockPredictor {
    fn width(&self) -> usize;
    fn predict(&self, window: &[Vec<f64>]) -> Result<Vec<f64>>;
}

/// Closure adapter for [`BlockPredictor`].
pub struct Block<F> {
    pub width: usize,
    pub f: F,
}

impl<F: Fn(&[Vec<f64>]) -> Vec<f64>> BlockPredictor for Block<F> {
    fn width(&self) -> usize {
        self.width
    }

    fn predict(&self, window: &[Vec<f64>]) -> Result<Vec<f64>> {
        let out = (self.f)(window);
        ensure!(out.len() == self.width, Dimension, "block predictor returned {} values, declared {}", out.len(), self.width);
        Ok(out)
    }
}

/// Row holding only the estimate.
pub fn univariate(_step: usize, estimate: f64) -> Vec<f64> {
    vec![estimate]
}

fn check_len(f: &dyn OneStepPredictor, len: usize, k: usize) -> Result<()> {
    if let Some(n) = f.input_len() {
        ensure!(n == len, Dimension, "predictor {k} expects windows of {n} rows, got {len}");
    }
    Ok(())
}

/// One model iterated `n_o` times; the window slides by one row per step.
pub fn forecast_recursive(
    f: &dyn OneStepPredictor,
    x: &[Vec<f64>],
    n_o: usize,
    vectorize: &dyn Fn(usize, f64) -> Vec<f64>,
) -> Result<Vec<f64>> {
    ensure!(n_o >= 1, InvalidArgument, "horizon must be >= 1");
    ensure!(!x.is_empty(), InvalidArgument, "empty window");
    check_len(f, x.len(), 0)?;
    let mut window = x.to_vec();
    let mut out = Vec::with_capacity(n_o);
    for j in 0..n_o {
        let y = f.predict(&window)?;
        out.push(y);
        window.remove(0);
        window.push(vectorize(j, y));
    }
    Ok(out)
}

/// One model per step, all reading the same window.
pub fn forecast_direct(models: &[&dyn OneStepPredictor], x: &[Vec<f64>], n_o: usize) -> Result<Vec<f64>> {
    ensure!(n_o >= 1, InvalidArgument, "horizon must be >= 1");
    ensure!(models.len() == n_o, InvalidArgument, "{} models for horizon {n_o}", models.len());
    models
        .iter()
        .enumerate()
        .map(|(k, f)| {
            check_len(*f, x.len(), k)?;
            f.predict(x)
        })
        .collect()
}

/// One model per step; model `k` reads the window grown by the `k` previous
/// estimates.
pub fn forecast_dirrec(
    models: &[&dyn OneStepPredictor],
    x: &[Vec<f64>],
    n_o: usize,
    vectorize: &dyn Fn(usize, f64) -> Vec<f64>,
) -> Result<Vec<f64>> {
    ensure!(n_o >= 1, InvalidArgument, "horizon must be >= 1");
    ensure!(models.len() == n_o, InvalidArgument, "{} models for horizon {n_o}", models.len());
    let mut window = x.to_vec();
    let mut out = Vec::with_capacity(n_o);
    for (k, f) in models.iter().enumerate() {
        check_len(*f, window.len(), k)?;
        let y = f.predict(&window)?;
        out.push(y);
        window.push(vectorize(k, y));
    }
    Ok(out)
}

/// A single block model covering the whole horizon.
pub fn forecast_mimo(model: &dyn BlockPredictor, x: &[Vec<f64>], n_o: usize) -> Result<Vec<f64>> {
    ensure!(model.width() == n_o, InvalidArgument, "block of {} for horizon {n_o}", model.width());
    model.predict(x)
}

/// Number of blocks of size `s` covering `n_o` steps.
pub fn dirmo_blocks(n_o: usize, s: usize) -> Result<usize> {
    ensure!(s >= 1 && s <= n_o, InvalidArgument, "block size {s} outside 1..={n_o}");
    Ok(n_o.div_ceil(s))
}

/// Width of block `j`; the last block is truncated when `s` does not divide
/// `n_o`.
pub fn dirmo_width(n_o: usize, s: usize, j: usize) -> usize {
    s.min(n_o - j * s)
}

/// Concatenated block forecasts, block `j` covering steps `j*s..`.
pub fn forecast_dirmo(models: &[&dyn BlockPredictor], x: &[Vec<f64>], n_o: usize, s: usize) -> Result<Vec<f64>> {
    let blocks = dirmo_blocks(n_o, s)?;
    ensure!(models.len() == blocks, InvalidArgument, "{} models, need {blocks}", models.len());
    let mut out = Vec::with_capacity(n_o);
    for (j, m) in models.iter().enumerate() {
        let w = dirmo_width(n_o, s, j);
        ensure!(m.width() >= w, InvalidArgument, "block {j} predicts {} values, needs {w}", m.width());
        out.extend(m.predict(x)?.into_iter().take(w));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    fn last(w: &[Vec<f64>]) -> f64 {
        w.last().unwrap()[0]
    }

    #[test]
    fn rec_persistence_trace() {
        assert_eq!(forecast_recursive(&last, &rows(&[1.0, 2.0, 3.0]), 4, &univariate).unwrap(), vec![3.0; 4]);
    }

    #[test]
    fn rec_mean_fixed_point() {
        let mean = |w: &[Vec<f64>]| w.iter().map(|r| r[0]).sum::<f64>() / w.len() as f64;
        assert_eq!(forecast_recursive(&mean, &rows(&[0.0, 0.0]), 5, &univariate).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn rec_iterated_linear_map() {
        let double = |w: &[Vec<f64>]| 2.0 * last(w);
        assert_eq!(forecast_recursive(&double, &rows(&[5.0, 1.0]), 3, &univariate).unwrap(), vec![2.0, 4.0, 8.0]);
        assert!(forecast_recursive(&double, &rows(&[1.0]), 0, &univariate).is_err());
    }

    #[test]
    fn rec_slides_window() {
        // sum of the window: [1,2,3] -> 6, [2,3,6] -> 11, [3,6,11] -> 20
        let sum = |w: &[Vec<f64>]| w.iter().map(|r| r[0]).sum::<f64>();
        assert_eq!(forecast_recursive(&sum, &rows(&[1.0, 2.0, 3.0]), 3, &univariate).unwrap(), vec![6.0, 11.0, 20.0]);
    }

    #[test]
    fn rec_vectorize_fills_exogenous() {
        let x = vec![vec![1.0, 10.0], vec![2.0, 20.0]];
        let f = |w: &[Vec<f64>]| w.last().unwrap()[1];
        let vec_row = |j: usize, y: f64| vec![y, 100.0 * (j + 1) as f64];
        assert_eq!(forecast_recursive(&f, &x, 3, &vec_row).unwrap(), vec![20.0, 100.0, 200.0]);
    }

    #[test]
    fn direct_examples() {
        let x = rows(&[4.0, 7.0]);
        let p: Vec<&dyn OneStepPredictor> = vec![&last, &last, &last];
        assert_eq!(forecast_direct(&p, &x, 3).unwrap(), vec![7.0; 3]);
        let c1 = |_: &[Vec<f64>]| 1.0;
        let c2 = |_: &[Vec<f64>]| 2.0;
        let c3 = |_: &[Vec<f64>]| 3.0;
        let p: Vec<&dyn OneStepPredictor> = vec![&c1, &c2, &c3];
        assert_eq!(forecast_direct(&p, &x, 3).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(forecast_direct(&p, &x, 2).is_err());
    }

    #[test]
    fn dirrec_grows_window() {
        let x = rows(&[1.0, 2.0, 3.0]);
        let p: Vec<&dyn OneStepPredictor> = vec![&last, &last, &last];
        assert_eq!(forecast_dirrec(&p, &x, 3, &univariate).unwrap(), vec![3.0; 3]);
        let len = |w: &[Vec<f64>]| w.len() as f64;
        let p: Vec<&dyn OneStepPredictor> = vec![&len, &len, &len, &len];
        assert_eq!(forecast_dirrec(&p, &x, 4, &univariate).unwrap(), vec![3.0, 4.0, 5.0, 6.0]);
    }

    struct Fixed(usize);
    impl OneStepPredictor for Fixed {
        fn predict(&self, w: &[Vec<f64>]) -> Result<f64> {
            Ok(w.len() as f64)
        }
        fn input_len(&self) -> Option<usize> {
            Some(self.0)
        }
    }

    #[test]
    fn dirrec_checks_window_lengths() {
        let x = rows(&[1.0, 2.0]);
        let (a, b) = (Fixed(2), Fixed(3));
        let p: Vec<&dyn OneStepPredictor> = vec![&a, &b];
        assert_eq!(forecast_dirrec(&p, &x, 2, &univariate).unwrap(), vec![2.0, 3.0]);
        let p: Vec<&dyn OneStepPredictor> = vec![&a, &a];
        assert!(forecast_dirrec(&p, &x, 2, &univariate).is_err());
    }

    #[test]
    fn mimo_examples() {
        let m = Block {
            width: 3,
            f: |_: &[Vec<f64>]| vec![1.0, 2.0, 3.0],
        };
        let x = rows(&[0.0]);
        assert_eq!(forecast_mimo(&m, &x, 3).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(forecast_mimo(&m, &x, 3).unwrap(), forecast_mimo(&m, &x, 3).unwrap());
        assert!(forecast_mimo(&m, &x, 4).is_err());
        let wide = Block {
            width: 24,
            f: |_: &[Vec<f64>]| vec![0.5; 24],
        };
        assert_eq!(forecast_mimo(&wide, &x, 24).unwrap().len(), 24);
    }

    #[test]
    fn dirmo_block_count_and_truncation() {
        assert_eq!(dirmo_blocks(24, 6).unwrap(), 4);
        assert_eq!(dirmo_blocks(10, 4).unwrap(), 3);
        assert!(dirmo_blocks(5, 0).is_err() && dirmo_blocks(5, 6).is_err());
        let ms: Vec<Block<_>> = (0..3)
            .map(|j| Block {
                width: 4,
                f: move |_: &[Vec<f64>]| (0..4).map(|i| (4 * j + i) as f64).collect(),
            })
            .collect();
        let p: Vec<&dyn BlockPredictor> = ms.iter().map(|m| m as &dyn BlockPredictor).collect();
        let out = forecast_dirmo(&p, &rows(&[0.0]), 10, 4).unwrap();
        assert_eq!(out, (0..10).map(f64::from).collect::<Vec<_>>());
    }

    fn lin(a: f64, b: f64) -> impl Fn(&[Vec<f64>]) -> f64 {
        move |w: &[Vec<f64>]| a * w.last().unwrap()[0] + b + 0.1 * w[0][0]
    }

    proptest! {
        #[test]
        fn rec_linear_matches_closed_form(a in -1.5f64..1.5, b in -2.0f64..2.0, x0 in -3.0f64..3.0, n_o in 1usize..12) {
            let f = move |w: &[Vec<f64>]| a * w.last().unwrap()[0] + b;
            let out = forecast_recursive(&f, &rows(&[0.3, x0]), n_o, &univariate).unwrap();
            for (k, v) in out.iter().enumerate() {
                let n = (k + 1) as i32;
                let closed = if (a - 1.0).abs() < 1e-12 {
                    x0 + b * n as f64
                } else {
                    a.powi(n) * x0 + b * (1.0 - a.powi(n)) / (1.0 - a)
                };
                prop_assert!((v - closed).abs() <= 1e-10 * (1.0 + closed.abs()));
            }
        }

        #[test]
        fn dirmo_degenerate_cases(coef in prop::collection::vec(-2.0f64..2.0, 1..8), x in prop::collection::vec(-5.0f64..5.0, 1..6)) {
            let n_o = coef.len();
            let win = rows(&x);
            let singles: Vec<_> = coef.iter().map(|&c| lin(c, 0.5)).collect();
            let one: Vec<&dyn OneStepPredictor> = singles.iter().map(|f| f as &dyn OneStepPredictor).collect();
            let direct = forecast_direct(&one, &win, n_o).unwrap();
            let blocks: Vec<_> = coef.iter().map(|&c| {
                let f = lin(c, 0.5);
                Block { width: 1, f: move |w: &[Vec<f64>]| vec![f(w)] }
            }).collect();
            let bp: Vec<&dyn BlockPredictor> = blocks.iter().map(|b| b as &dyn BlockPredictor).collect();
            prop_assert_eq!(forecast_dirmo(&bp, &win, n_o, 1).unwrap(), direct.clone());

            let c2 = coef.clone();
            let whole = Block { width: n_o, f: move |w: &[Vec<f64>]| c2.iter().map(|&c| lin(c, 0.5)(w)).collect() };
            prop_assert_eq!(forecast_dirmo(&[&whole], &win, n_o, n_o).unwrap(), forecast_mimo(&whole, &win, n_o).unwrap());
            prop_assert_eq!(forecast_mimo(&whole, &win, n_o).unwrap(), direct);
        }

        #[test]
        fn single_step_strategies_agree(c in -2.0f64..2.0, x in prop::collection::vec(-5.0f64..5.0, 1..6)) {
            let f = lin(c, -0.25);
            let win = rows(&x);
            let rec = forecast_recursive(&f, &win, 1, &univariate).unwrap();
            prop_assert_eq!(forecast_direct(&[&f], &win, 1).unwrap(), rec.clone());
            prop_assert_eq!(forecast_dirrec(&[&f], &win, 1, &univariate).unwrap(), rec);
        }

        #[test]
        fn strategies_are_pure(c in -2.0f64..2.0, x in prop::collection::vec(-5.0f64..5.0, 1..6), n_o in 1usize..6) {
            let f = lin(c, 0.1);
            let win = rows(&x);
            prop_assert_eq!(
                forecast_recursive(&f, &win, n_o, &univariate).unwrap(),
                forecast_recursive(&f, &win, n_o, &univariate).unwrap()
            );
            let p: Vec<&dyn OneStepPredictor> = vec![&f; n_o];
            prop_assert_eq!(forecast_dirrec(&p, &win, n_o, &univariate).unwrap(), forecast_dirrec(&p, &win, n_o, &univariate).unwrap());
        }
    }
}
