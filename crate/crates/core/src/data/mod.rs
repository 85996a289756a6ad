//! Ingestion, cleaning, transformation, splitting and windowing of load
//! series, plus a synthetic generator.

mod ingest;
mod pipeline;
mod series;
mod split;
mod synth;
mod transform;
mod windows;

pub use ingest::{cache_hash, read_cache, read_gefcom, read_ihepc, write_cache, GefcomSchema, IhepcSchema};
pub use pipeline::{
    load_prepared, load_series, prepare, DatasetConfig, DatasetKind, IngestSummary, Prepared, Stage, StageLog,
    TestPartition,
};
pub use series::{impute_slot_mean, resample_mean, ImputeReport, TimeSeries};
pub use split::{span_origins, split, Partition, Split, SplitCounts, SplitSpec};
pub use synth::{synth_series, synth_signal, SynthSpec};
pub use transform::{inverse_log, log_transform, one_hot, CalendarEncoder, LoadScaler, Standardizer};
pub use windows::{make_windows, window_count, Batch, Frame, Samples, WindowPair, WindowSet};
