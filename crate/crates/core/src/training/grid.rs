use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{TestPartition, WindowSet};
use crate::error::{ensure, Error, Result};

/// Candidate values per hyperparameter; an empty list keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub layers: Vec<usize>,
    pub hidden: Vec<usize>,
    pub lambda: Vec<f64>,
    pub dropout: Vec<f64>,
    pub kernel: Vec<usize>,
    pub filters: Vec<usize>,
}

/// One grid coordinate; `None` fields inherit the base configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub lambda: Option<f64>,
    pub dropout: Option<f64>,
    pub kernel: Option<usize>,
    pub filters: Option<usize>,
}

fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().copied().map(Some).collect()
    }
}

impl GridSpec {
    /// Cartesian product, `layers` varying slowest and `filters` fastest.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for layers in axis(&self.layers) {
            for hidden in axis(&self.hidden) {
                for lambda in axis(&self.lambda) {
                    for dropout in axis(&self.dropout) {
                        for kernel in axis(&self.kernel) {
                            for filters in axis(&self.filters) {
                                out.push(GridPoint {
                                    layers,
                                    hidden,
                                    lambda,
                                    dropout,
                                    kernel,
                                    filters,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        [self.layers.len(), self.hidden.len(), self.lambda.len(), self.dropout.len(), self.kernel.len(), self.filters.len()]
            .iter()
            .map(|&n| n.max(1))
            .product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Validation outcome of one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub point: GridPoint,
    pub val_rmse: Option<f64>,
    pub n_params: usize,
    pub error: Option<String>,
}

/// What a grid-point trainer reports back.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialScore {
    pub val_rmse: f64,
    pub n_params: usize,
}

/// Index of the best trial: lowest validation RMSE, then fewer parameters,
/// then earlier enumeration.
pub fn select_winner(trials: &[Trial]) -> Result<usize> {
    trials
        .iter()
        .filter_map(|t| t.val_rmse.filter(|v| v.is_finite()).map(|v| (v, t.n_params, t.index)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)))
        .map(|(_, _, i)| i)
        .ok_or_else(|| Error::Divergence("every grid point diverged".into()))
}

/// Seed of repeat `i` derived from a base seed.
pub fn repeat_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

fn in_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs `f(i, seed_i)` for every repeat on `workers` threads, keeping order.
pub fn run_repeats<R: Send>(
    repeats: usize,
    base_seed: u64,
    workers: usize,
    f: impl Fn(usize, u64) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    ensure!(repeats >= 1, Config, "repeats must be >= 1");
    let results: Vec<Result<R>> =
        in_pool(workers, || (0..repeats).into_par_iter().map(|i| f(i, repeat_seed(base_seed, i))).collect())?;
    results.into_iter().collect()
}

/// Leaderboard plus the winner's repeated test evaluations.
#[derive(Clone, Debug)]
pub struct GridOutcome<R> {
    pub leaderboard: Vec<Trial>,
    pub winner: usize,
    pub test_runs: Vec<R>,
}

/// Trains every point once (`train_point` returns its validation score),
/// picks the winner, then opens the test partition once and hands it to
/// `repeats` reseeded runs of `evaluate`.
#[allow(clippy::too_many_arguments)]
pub fn grid_search<R: Send>(
    spec: &GridSpec,
    workers: usize,
    seed: u64,
    repeats: usize,
    test: &TestPartition,
    train_point: impl Fn(&GridPoint, u64) -> Result<TrialScore> + Sync,
    evaluate: impl Fn(&GridPoint, u64, &WindowSet) -> Result<R> + Sync,
) -> Result<GridOutcome<R>> {
    let points = spec.points();
    ensure!(!points.is_empty(), Config, "empty grid");
    let scored: Vec<Result<TrialScore>> =
        in_pool(workers, || points.par_iter().map(|p| train_point(p, seed)).collect())?;
    let mut leaderboard = Vec::with_capacity(points.len());
    for (index, (point, r)) in points.into_iter().zip(scored).enumerate() {
        let trial = match r {
            Ok(s) => Trial {
                index,
                point,
                val_rmse: Some(s.val_rmse),
                n_params: s.n_params,
                error: None,
            },
            Err(e @ Error::Divergence(_)) => {
                log::warn!("grid point {index} diverged: {e}");
                Trial {
                    index,
                    point,
                    val_rmse: None,
                    n_params: 0,
                    error: Some(e.to_string()),
                }
            }
            Err(e) => return Err(e),
        };
        leaderboard.push(trial);
    }
    let winner = select_winner(&leaderboard)?;
    let point = leaderboard[winner].point.clone();
    let windows = test.open()?;
    let test_runs = run_repeats(repeats, seed, workers, |_, s| evaluate(&point, s, windows))?;
    Ok(GridOutcome {
        leaderboard,
        winner,
        test_runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn trial(index: usize, v: Option<f64>, n: usize) -> Trial {
        Trial {
            index,
            point: GridPoint::default(),
            val_rmse: v,
            n_params: n,
            error: None,
        }
    }

    #[test]
    fn cartesian_product_enumerated_once() {
        let g = GridSpec {
            layers: vec![1, 2],
            hidden: vec![10, 20, 30],
            lambda: vec![0.0, 0.1],
            ..GridSpec::default()
        };
        let p = g.points();
        assert_eq!(p.len(), 12);
        assert_eq!(g.len(), 12);
        for i in 0..p.len() {
            for j in 0..i {
                assert_ne!(p[i], p[j]);
            }
        }
        assert_eq!(p[0].layers, Some(1));
        assert_eq!(p[1].lambda, Some(0.1));
        assert_eq!(p[11].hidden, Some(30));
        assert_eq!(GridSpec::default().points().len(), 1);
    }

    #[test]
    fn winner_tie_breaks() {
        let t = vec![trial(0, Some(1.0), 50), trial(1, Some(0.5), 90), trial(2, Some(0.5), 40), trial(3, Some(0.5), 40)];
        assert_eq!(select_winner(&t).unwrap(), 2);
        assert_eq!(select_winner(&[trial(0, None, 1), trial(1, Some(3.0), 9)]).unwrap(), 1);
        assert!(matches!(select_winner(&[trial(0, None, 1)]), Err(Error::Divergence(_))));
    }

    #[test]
    fn repeats_keep_order_and_seeds() {
        let r = run_repeats(5, 40, 2, |i, s| Ok((i, s))).unwrap();
        assert_eq!(r, (0..5).map(|i| (i, 40 + i as u64)).collect::<Vec<_>>());
    }

    fn partition() -> TestPartition {
        use crate::data::{Frame, WindowSet};
        use std::sync::Arc;
        let ts = crate::data::synth_series(&crate::data::SynthSpec {
            length: 40,
            ..Default::default()
        })
        .unwrap()
        .timestamps;
        let load: Vec<f64> = (0..40).map(f64::from).collect();
        let frame = Arc::new(Frame::univariate(ts, &load).unwrap());
        TestPartition::new(WindowSet::all(frame, 4, 2).unwrap())
    }

    #[test]
    fn two_by_two_grid_runs_four_trainings_then_tests_winner() {
        let runs = AtomicUsize::new(0);
        let test = partition();
        let g = GridSpec {
            layers: vec![1, 2],
            hidden: vec![4, 8],
            ..GridSpec::default()
        };
        let out = grid_search(
            &g,
            2,
            7,
            3,
            &test,
            |p, _| {
                runs.fetch_add(1, Ordering::SeqCst);
                let v = if p.layers == Some(2) && p.hidden == Some(4) { 0.1 } else { 1.0 };
                Ok(TrialScore { val_rmse: v, n_params: 10 })
            },
            |p, s, w| {
                assert_eq!(runs.load(Ordering::SeqCst), 4);
                Ok((p.clone(), s, crate::data::Samples::len(w)))
            },
        )
        .unwrap();
        assert_eq!(out.leaderboard.len(), 4);
        assert_eq!(out.winner, 2);
        assert_eq!(out.test_runs.len(), 3);
        assert_eq!(test.accesses(), 1);
        assert!(out.test_runs.iter().all(|r| r.0.layers == Some(2) && r.0.hidden == Some(4)));
    }

    #[test]
    fn single_point_selected_and_all_diverged_fails() {
        let test = partition();
        let out = grid_search(
            &GridSpec::default(),
            1,
            0,
            1,
            &test,
            |_, _| Ok(TrialScore { val_rmse: 2.0, n_params: 1 }),
            |_, _, _| Ok(()),
        )
        .unwrap();
        assert_eq!(out.winner, 0);
        let test = partition();
        let err = grid_search(
            &GridSpec {
                layers: vec![1, 2],
                ..GridSpec::default()
            },
            1,
            0,
            1,
            &test,
            |_, _| Err(Error::Divergence("nan".into())),
            |_, _, _| Ok(()),
        );
        assert!(matches!(err, Err(Error::Divergence(_))));
        assert_eq!(test.accesses(), 0);
    }
}
