use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use chrono::{Datelike, Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ingest::{read_gefcom, read_ihepc, GefcomSchema, IhepcSchema};
use super::series::{impute_slot_mean, resample_mean, ImputeReport, TimeSeries};
use super::split::{span_origins, split, Split, SplitCounts, SplitSpec};
use super::synth::{synth_series, SynthSpec};
use super::transform::{log_transform, CalendarEncoder, LoadScaler, Standardizer};
use super::windows::{Frame, WindowSet};
use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Ihepc,
    Gefcom,
    Synthetic,
}

/// Everything needed to turn a source into model-ready windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub kind: DatasetKind,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub ihepc: IhepcSchema,
    #[serde(default)]
    pub gefcom: GefcomSchema,
    #[serde(default)]
    pub synthetic: SynthSpec,
    /// Resampling bin in minutes; `None` keeps the source rate.
    #[serde(default)]
    pub resample_minutes: Option<i64>,
    #[serde(default)]
    pub log_transform: bool,
    /// Feed temperatures and calendar one-hots alongside the load.
    #[serde(default)]
    pub exogenous: bool,
    pub n_t: usize,
    pub n_o: usize,
    #[serde(default)]
    pub split: SplitSpec,
    /// Drop windows whose targets contain fallback-imputed values.
    #[serde(default = "yes")]
    pub strict_targets: bool,
}

fn yes() -> bool {
    true
}

impl DatasetConfig {
    pub fn ihepc(path: impl Into<PathBuf>) -> Self {
        Self {
            name: "ihepc".into(),
            kind: DatasetKind::Ihepc,
            path: Some(path.into()),
            ihepc: IhepcSchema::default(),
            gefcom: GefcomSchema::default(),
            synthetic: SynthSpec::default(),
            resample_minutes: Some(15),
            log_transform: true,
            exogenous: false,
            n_t: 4 * 96,
            n_o: 96,
            split: SplitSpec::default(),
            strict_targets: true,
        }
    }

    pub fn gefcom(path: impl Into<PathBuf>, exogenous: bool) -> Self {
        Self {
            name: if exogenous { "gefcom-exog".into() } else { "gefcom".into() },
            kind: DatasetKind::Gefcom,
            resample_minutes: None,
            log_transform: false,
            exogenous,
            n_t: 4 * 24,
            n_o: 24,
            ..Self::ihepc(path)
        }
    }

    /// 200 days of hourly synthetic load, split 150/20/30 days.
    pub fn synthetic(spec: SynthSpec) -> Self {
        Self {
            name: "synthetic".into(),
            kind: DatasetKind::Synthetic,
            path: None,
            synthetic: spec,
            resample_minutes: None,
            log_transform: false,
            n_t: 168,
            n_o: 24,
            split: SplitSpec::Tail { val_days: 20, test_days: 30 },
            ..Self::gefcom("", false)
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_t >= 1 && self.n_o >= 1, Config, "n_t and n_o must be positive");
        ensure!(
            self.kind == DatasetKind::Synthetic || self.path.is_some(),
            Config,
            "dataset {} needs a path",
            self.name
        );
        ensure!(
            !(self.exogenous && self.kind != DatasetKind::Gefcom),
            Config,
            "exogenous features are only available for the gefcom dataset"
        );
        Ok(())
    }

    /// Hash of the ingestion settings and source size, stored in cache headers.
    pub fn pipeline_hash(&self) -> String {
        let ingest = serde_json::json!({
            "version": 1,
            "kind": self.kind,
            "ihepc": self.ihepc,
            "gefcom": self.gefcom,
            "synthetic": self.synthetic,
            "resample": self.resample_minutes,
            "source_len": self.path.as_ref().and_then(|p| fs::metadata(p).ok()).map(|m| m.len()),
        });
        let digest = Sha256::digest(ingest.to_string().as_bytes());
        digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
    }
}

/// Pipeline stages in their required order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Impute,
    Resample,
    Log,
    Split,
    Standardize,
    Window,
}

/// Records applied stages and rejects out-of-order application.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLog {
    pub applied: Vec<Stage>,
}

impl StageLog {
    pub fn advance(&mut self, stage: Stage) -> Result<()> {
        if let Some(&last) = self.applied.last() {
            ensure!(stage > last, InvalidArgument, "pipeline stage {stage:?} cannot follow {last:?}");
        }
        self.applied.push(stage);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub rows: usize,
    pub missing_fraction: f64,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub impute: ImputeReport,
    pub resampled_rows: usize,
}

/// Reads (or generates) the source, imputes and resamples.
pub fn load_series(cfg: &DatasetConfig, stages: &mut StageLog) -> Result<(TimeSeries, IngestSummary)> {
    cfg.validate()?;
    let mut raw = match cfg.kind {
        DatasetKind::Synthetic => synth_series(&cfg.synthetic)?,
        kind => {
            let path = cfg.path.as_ref().expect("validated");
            let file = fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
            let buf = std::io::BufReader::new(file);
            match kind {
                DatasetKind::Ihepc => read_ihepc(buf, &cfg.ihepc)?,
                _ => read_gefcom(buf, &cfg.gefcom)?,
            }
        }
    };
    raw.check_non_negative()?;
    let rows = raw.len();
    let missing_fraction = raw.missing_fraction();
    stages.advance(Stage::Impute)?;
    let impute = impute_slot_mean(&mut raw)?;
    let series = match cfg.resample_minutes {
        Some(m) => {
            stages.advance(Stage::Resample)?;
            resample_mean(&raw, Duration::minutes(m))?
        }
        None => raw,
    };
    let summary = IngestSummary {
        rows,
        missing_fraction,
        start: series.timestamps[0],
        end: *series.timestamps.last().unwrap(),
        impute,
        resampled_rows: series.len(),
    };
    Ok((series, summary))
}

/// Test windows behind an access counter: they can be opened exactly once.
#[derive(Debug)]
pub struct TestPartition {
    windows: WindowSet,
    accesses: AtomicUsize,
}

impl TestPartition {
    pub fn new(windows: WindowSet) -> Self {
        Self {
            windows,
            accesses: AtomicUsize::new(0),
        }
    }

    pub fn open(&self) -> Result<&WindowSet> {
        let n = self.accesses.fetch_add(1, Ordering::SeqCst);
        ensure!(n == 0, InvalidArgument, "test partition already evaluated");
        Ok(&self.windows)
    }

    pub fn accesses(&self) -> usize {
        self.accesses.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.windows.origins().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Transformed data, split and windowed.
#[derive(Debug)]
pub struct Prepared {
    pub name: String,
    pub frame: Arc<Frame>,
    pub split: Split,
    pub counts: SplitCounts,
    pub scaler: LoadScaler,
    pub temperature_scalers: Vec<Standardizer>,
    /// Min and max of the training targets in original units.
    pub train_range: (f64, f64),
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: TestPartition,
    pub stages: StageLog,
}

impl Prepared {
    pub fn n_t(&self) -> usize {
        self.train.n_t()
    }

    pub fn n_o(&self) -> usize {
        self.train.n_o()
    }
}

/// Log transform (optional), split, train-only standardization, windowing.
pub fn prepare(series: &TimeSeries, cfg: &DatasetConfig, mut stages: StageLog) -> Result<Prepared> {
    ensure!(!series.has_missing(), Data, "prepare needs an imputed series");
    let load = if cfg.log_transform {
        stages.advance(Stage::Log)?;
        log_transform(&series.load)?
    } else {
        series.load.clone()
    };
    stages.advance(Stage::Split)?;
    let sp = split(&series.timestamps, &cfg.split)?;
    let train_idx: Vec<usize> = sp.train.iter().flat_map(|r| r.clone()).collect();
    ensure!(!train_idx.is_empty(), Data, "empty training span");

    stages.advance(Stage::Standardize)?;
    let standardizer = Standardizer::fit(train_idx.iter().map(|&i| &load[i]))?;
    let scaler = LoadScaler {
        log: cfg.log_transform,
        standardizer,
    };
    let z: Vec<f64> = standardizer.forward(&load);
    let (temps, temperature_scalers, calendar) = if cfg.exogenous {
        let mut scaled = Vec::new();
        let mut scalers = Vec::new();
        for c in &series.temperatures {
            let s = Standardizer::fit(train_idx.iter().map(|&i| &c[i]))?;
            scaled.push(s.forward(c));
            scalers.push(s);
        }
        let enc = CalendarEncoder::new(train_idx.iter().map(|&i| series.timestamps[i].year()))?;
        let unseen = enc.unseen_years(&series.timestamps);
        if !unseen.is_empty() {
            log::warn!("years {unseen:?} absent from training; encoded as the nearest earlier training year");
        }
        (scaled, scalers, Some(enc))
    } else {
        (Vec::new(), Vec::new(), None)
    };
    let frame = Arc::new(Frame::new(series.timestamps.clone(), &z, &temps, calendar.as_ref())?);

    let (lo, hi) = train_idx
        .iter()
        .map(|&i| series.load[i])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));

    stages.advance(Stage::Window)?;
    let (n_t, n_o) = (cfg.n_t, cfg.n_o);
    let keep = |o: &usize| !cfg.strict_targets || !series.flagged[o + n_t..o + n_t + n_o].iter().any(|&f| f);
    let windows = |spans: &[std::ops::Range<usize>]| -> Result<WindowSet> {
        let origins: Vec<usize> = span_origins(spans, n_t, n_o).into_iter().filter(keep).collect();
        WindowSet::new(frame.clone(), origins, n_t, n_o)
    };
    let train = windows(&sp.train)?;
    let val = windows(&sp.val)?;
    let test = windows(std::slice::from_ref(&sp.test))?;
    ensure!(!train.origins().is_empty(), Data, "no training window fits n_T + n_O = {}", n_t + n_o);
    ensure!(!test.origins().is_empty(), Data, "no test window fits n_T + n_O = {}", n_t + n_o);
    if val.origins().is_empty() {
        log::warn!("validation partition holds no complete window");
    }
    Ok(Prepared {
        name: cfg.name.clone(),
        counts: sp.counts(),
        split: sp,
        frame,
        scaler,
        temperature_scalers,
        train_range: (lo, hi),
        train,
        val,
        test: TestPartition::new(test),
        stages,
    })
}

/// Ingest and prepare in one call.
pub fn load_prepared(cfg: &DatasetConfig) -> Result<(Prepared, IngestSummary)> {
    let mut stages = StageLog::default();
    let (series, summary) = load_series(cfg, &mut stages)?;
    Ok((prepare(&series, cfg, stages)?, summary))
}
