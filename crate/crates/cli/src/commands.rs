use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stlf::data::{load_prepared, load_series, prepare, read_cache, write_cache, DatasetKind, Prepared, Stage, StageLog};
use stlf::metrics::{write_rows, EvalReport, ReportRow};
use stlf::models::{grid_benchmark, train_and_test, Evaluation, Trained};
use stlf::{Error, Result};

use crate::config::RunConfig;
use crate::plot::{day_svg, Curve};

/// Missing share of the household file as usually quoted for it.
const IHEPC_MISSING_REFERENCE: f64 = 0.0125;

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.into())
}

pub fn ingest(cfg: &RunConfig) -> Result<PathBuf> {
    let mut stages = StageLog::default();
    let (series, summary) = load_series(&cfg.dataset, &mut stages)?;
    let path = cfg.cache_path();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    write_cache(&path, &series, &cfg.dataset.pipeline_hash())?;
    println!("dataset    {}", cfg.dataset.name);
    println!("rows       {}", summary.rows);
    println!("missing    {:.4}%", 100.0 * summary.missing_fraction);
    println!("span       {} .. {}", summary.start, summary.end);
    println!("resampled  {} rows", summary.resampled_rows);
    println!(
        "imputed    {} values, {} by fallback",
        summary.impute.filled, summary.impute.fallback
    );
    if cfg.dataset.kind == DatasetKind::Ihepc {
        let diff = summary.missing_fraction - IHEPC_MISSING_REFERENCE;
        println!(
            "reference  {:.2}% missing expected, difference {:+.3} points",
            100.0 * IHEPC_MISSING_REFERENCE,
            100.0 * diff
        );
    }
    println!("cache      {}", path.display());
    Ok(path)
}

/// Prepared data from the ingest cache; synthetic data is generated when no
/// cache exists.
pub fn prepared(cfg: &RunConfig) -> Result<Prepared> {
    let path = cfg.cache_path();
    if !path.exists() {
        if cfg.dataset.kind == DatasetKind::Synthetic {
            return Ok(load_prepared(&cfg.dataset)?.0);
        }
        return Err(Error::Data(format!(
            "no cache at {}; run the ingest command first",
            path.display()
        )));
    }
    let series = read_cache(&path, Some(&cfg.dataset.pipeline_hash()))?;
    let mut stages = StageLog::default();
    stages.advance(Stage::Impute)?;
    if cfg.dataset.resample_minutes.is_some() {
        stages.advance(Stage::Resample)?;
    }
    prepare(&series, &cfg.dataset, stages)
}

fn run_dir(cfg: &RunConfig, kind: &str, force: bool) -> Result<PathBuf> {
    let name = format!("{kind}-{}-{}-{}", cfg.dataset.name, cfg.model.label(), cfg.hash()?);
    let dir = cfg.report.output_dir.join(name);
    if dir.exists() {
        if !force {
            return Err(Error::Config(format!(
                "run directory {} exists; pass --force to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(dir)
}

#[derive(Serialize)]
struct RunRow {
    repeat: usize,
    rmse: f64,
    mae: f64,
    nrmse: f64,
    r2: f64,
}

#[derive(Serialize)]
struct CurveRow {
    repeat: usize,
    member: usize,
    epoch: usize,
    train_loss: f64,
    val_rmse: f64,
    best: bool,
}

#[derive(Serialize, Deserialize)]
struct DayRow {
    window: usize,
    step: usize,
    kind: String,
    value: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn write_outputs(dir: &Path, cfg: &RunConfig, data: &Prepared, report: &EvalReport, runs: &[(Trained, Evaluation)]) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("report.json"), json + "\n")?;
    write_rows(&dir.join("report.csv"), &[report.row()])?;
    write_csv(
        &dir.join("runs.csv"),
        runs.iter().enumerate().map(|(repeat, (_, e))| RunRow {
            repeat,
            rmse: e.scores.rmse,
            mae: e.scores.mae,
            nrmse: e.scores.nrmse,
            r2: e.scores.r2,
        }),
    )?;
    let mut curves = Vec::new();
    for (r, (t, _)) in runs.iter().enumerate() {
        for (m, rep) in t.reports.iter().enumerate() {
            for (e, (loss, val)) in rep.train_loss.iter().zip(&rep.val_rmse).enumerate() {
                curves.push(CurveRow {
                    repeat: r,
                    member: m,
                    epoch: e + 1,
                    train_loss: *loss,
                    val_rmse: *val,
                    best: e + 1 == rep.best_epoch,
                });
            }
        }
    }
    write_csv(&dir.join("curves.csv"), curves)?;
    if let Some((t, eval)) = runs.first() {
        t.forecaster.save(&dir.join("model"))?;
        let n_t = data.n_t();
        let tail = n_t.min(2 * data.n_o());
        let mut days = Vec::new();
        for &w in &cfg.report.plot_days {
            let Some(&origin) = eval.origins.get(w) else {
                log::warn!("plot day {w} outside the {} test windows", eval.origins.len());
                continue;
            };
            for (k, t) in (origin + n_t - tail..origin + n_t).enumerate() {
                let value = data.scaler.to_original(data.frame.load(t));
                days.push(DayRow { window: w, step: k, kind: "input".into(), value });
            }
            for (kind, series) in [("truth", &eval.truth[w]), ("forecast", &eval.forecast[w])] {
                for (k, v) in series.iter().enumerate() {
                    days.push(DayRow { window: w, step: k, kind: kind.into(), value: *v });
                }
            }
        }
        write_csv(&dir.join("days.csv"), days)?;
    }
    let [rmse, mae, nrmse, r2] = report.summary();
    println!(
        "{} {} on {}: RMSE {:.4} ± {:.4}  MAE {:.4} ± {:.4}  NRMSE {:.2}% ± {:.2}  R2 {:.4} ± {:.4}  ({} runs, {} windows)",
        report.model,
        report.strategy,
        report.dataset,
        rmse.mean,
        rmse.std,
        mae.mean,
        mae.std,
        nrmse.mean,
        nrmse.std,
        r2.mean,
        r2.std,
        report.runs.len(),
        report.n_windows
    );
    println!("run directory {}", dir.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, force: bool) -> Result<PathBuf> {
    let data = prepared(cfg)?;
    let dir = run_dir(cfg, "train", force)?;
    let bench = train_and_test(&cfg.model, &data, &cfg.training)?;
    write_outputs(&dir, cfg, &data, &bench.report, &bench.runs)?;
    Ok(dir)
}

#[derive(Serialize)]
struct LeaderRow {
    index: usize,
    layers: Option<usize>,
    hidden: Option<usize>,
    lambda: Option<f64>,
    dropout: Option<f64>,
    kernel: Option<usize>,
    filters: Option<usize>,
    val_rmse: Option<f64>,
    n_params: usize,
    error: Option<String>,
    winner: bool,
}

pub fn grid(cfg: &RunConfig, force: bool) -> Result<PathBuf> {
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| Error::Config("the grid command needs a [grid] block".into()))?;
    let data = prepared(cfg)?;
    let dir = run_dir(cfg, "grid", force)?;
    let (outcome, report) = grid_benchmark(&cfg.model, grid, &data, &cfg.training)?;
    write_csv(
        &dir.join("leaderboard.csv"),
        outcome.leaderboard.iter().map(|t| LeaderRow {
            index: t.index,
            layers: t.point.layers,
            hidden: t.point.hidden,
            lambda: t.point.lambda,
            dropout: t.point.dropout,
            kernel: t.point.kernel,
            filters: t.point.filters,
            val_rmse: t.val_rmse,
            n_params: t.n_params,
            error: t.error.clone(),
            winner: t.index == outcome.winner,
        }),
    )?;
    let point = &outcome.leaderboard[outcome.winner].point;
    let mut winner = cfg.clone();
    winner.model = cfg.model.with_point(point);
    if let Some(l) = point.lambda {
        winner.training.lambda = l;
    }
    winner.grid = None;
    fs::write(dir.join("winner.toml"), winner.to_toml()?)?;
    println!("winner: grid point {} {:?}", outcome.winner, point);
    write_outputs(&dir, cfg, &data, &report, &outcome.test_runs)?;
    Ok(dir)
}

fn read_days(dir: &Path) -> Result<BTreeMap<usize, BTreeMap<String, Vec<f64>>>> {
    let mut out: BTreeMap<usize, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let path = dir.join("days.csv");
    if !path.exists() {
        return Ok(out);
    }
    let mut r = csv::Reader::from_path(&path).map_err(csv_error)?;
    for row in r.deserialize::<DayRow>() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: format!("{}: {e}", path.display()),
        })?;
        out.entry(row.window).or_default().entry(row.kind).or_default().push(row.value);
    }
    Ok(out)
}

/// Merges finished runs into one comparison table and per-day plots.
pub fn report(dirs: &[PathBuf], out: &Path, plots: bool, force: bool) -> Result<Vec<ReportRow>> {
    if dirs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let mut reports = Vec::with_capacity(dirs.len());
    for d in dirs {
        let path = d.join("report.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Data(format!("{} is not a finished run: {e}", d.display())))?;
        let r: EvalReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: format!("{}: {e}", path.display()),
        })?;
        reports.push(r);
    }
    let dataset = &reports[0].dataset;
    if let Some(other) = reports.iter().find(|r| &r.dataset != dataset) {
        return Err(Error::Config(format!(
            "runs mix datasets {dataset:?} and {:?}; report one dataset at a time",
            other.dataset
        )));
    }
    let table = out.join("comparison.csv");
    if table.exists() && !force {
        return Err(Error::Config(format!("{} exists; pass --force to replace it", table.display())));
    }
    fs::create_dir_all(out)?;
    let rows: Vec<ReportRow> = reports.iter().map(EvalReport::row).collect();
    write_rows(&table, &rows)?;
    println!("{:<12} {:<9} {:>16} {:>16} {:>14} {:>16}", "model", "strategy", "RMSE", "MAE", "NRMSE %", "R2");
    for r in &rows {
        println!(
            "{:<12} {:<9} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4} {:>6.2} ± {:<5.2} {:>8.4} ± {:<6.4}",
            r.model, r.strategy, r.rmse, r.rmse_std, r.mae, r.mae_std, r.nrmse, r.nrmse_std, r.r2, r.r2_std
        );
    }
    println!("table {}", table.display());
    if plots {
        let days = dirs.iter().map(|d| read_days(d)).collect::<Result<Vec<_>>>()?;
        let labels: Vec<String> = reports
            .iter()
            .zip(dirs)
            .map(|(r, d)| {
                let base = format!("{}-{}", r.model, r.strategy);
                if reports.iter().filter(|o| o.model == r.model && o.strategy == r.strategy).count() > 1 {
                    format!("{base} ({})", d.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()))
                } else {
                    base
                }
            })
            .collect();
        for (w, first) in &days[0] {
            let (Some(tail), Some(truth)) = (first.get("input"), first.get("truth")) else {
                continue;
            };
            let curves: Vec<Curve> = days
                .iter()
                .zip(&labels)
                .filter_map(|(d, l)| d.get(w).and_then(|k| k.get("forecast")).map(|v| Curve { label: l, values: v }))
                .collect();
            let svg = day_svg(&format!("{dataset}: test window {w}"), tail, truth, &curves);
            let path = out.join(format!("day{w}.svg"));
            fs::write(&path, svg)?;
            println!("plot  {}", path.display());
        }
    }
    Ok(rows)
}
