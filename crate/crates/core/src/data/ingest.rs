use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use super::series::TimeSeries;
use crate::error::{ensure, Error, Result};

/// Column layout of the household power consumption text file.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct IhepcSchema {
    pub delimiter: char,
    pub date_column: String,
    pub time_column: String,
    pub load_column: String,
    pub missing_marker: String,
    pub date_format: String,
    pub time_format: String,
}

impl Default for IhepcSchema {
    fn default() -> Self {
        Self {
            delimiter: ';',
            date_column: "Date".into(),
            time_column: "Time".into(),
            load_column: "Global_active_power".into(),
            missing_marker: "?".into(),
            date_format: "%d/%m/%Y".into(),
            time_format: "%H:%M:%S".into(),
        }
    }
}

/// Column layout of the hourly zonal load file with station temperatures.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct GefcomSchema {
    pub delimiter: char,
    pub timestamp_column: String,
    pub load_column: String,
    pub temperature_prefix: String,
    pub timestamp_format: String,
}

impl Default for GefcomSchema {
    fn default() -> Self {
        Self {
            delimiter: ',',
            timestamp_column: "TIMESTAMP".into(),
            load_column: "LOAD".into(),
            temperature_prefix: "w".into(),
            timestamp_format: "%m/%d/%Y %H:%M".into(),
        }
    }
}

fn delimiter_byte(c: char) -> Result<u8> {
    u8::try_from(u32::from(c)).map_err(|_| Error::Config(format!("delimiter {c:?} is not a single byte")))
}

fn reader(delimiter: char, source: impl Read) -> Result<csv::Reader<impl Read>> {
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter_byte(delimiter)?)
        .trim(csv::Trim::All)
        .from_reader(source))
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing column {name:?}") })
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { line, msg: e.to_string() }
}

fn parse_f64(rec: &csv::StringRecord, idx: usize, what: &str) -> Result<f64> {
    let raw = rec.get(idx).unwrap_or("");
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse { line: line_of(rec), msg: format!("column {what}: cannot parse {raw:?} as a number") })
}

/// Reads the semicolon-separated minute-level file. Timestamp gaps are filled
/// with rows marked missing.
pub fn read_ihepc(source: impl Read, schema: &IhepcSchema) -> Result<TimeSeries> {
    let mut rdr = reader(schema.delimiter, source)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let (dc, tc, lc) = (
        column(&headers, &schema.date_column)?,
        column(&headers, &schema.time_column)?,
        column(&headers, &schema.load_column)?,
    );
    let (mut ts, mut load, mut missing) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = line_of(&rec);
        let bad = |msg: String| Error::Parse { line, msg };
        let date = NaiveDate::parse_from_str(rec.get(dc).unwrap_or(""), &schema.date_format)
            .map_err(|e| bad(format!("date {:?}: {e}", rec.get(dc).unwrap_or(""))))?;
        let time = NaiveTime::parse_from_str(rec.get(tc).unwrap_or(""), &schema.time_format)
            .map_err(|e| bad(format!("time {:?}: {e}", rec.get(tc).unwrap_or(""))))?;
        ts.push(date.and_time(time));
        if rec.get(lc) == Some(schema.missing_marker.as_str()) || rec.get(lc) == Some("") {
            load.push(0.0);
            missing.push(true);
        } else {
            load.push(parse_f64(&rec, lc, &schema.load_column)?);
            missing.push(false);
        }
    }
    fill_gaps(ts, load, missing, Vec::new(), Vec::new())
}

/// Reads the hourly load file with temperature columns
/// `{prefix}1, {prefix}2, ..`. Rows before the first observed load are
/// dropped; missing temperatures are carried forward.
pub fn read_gefcom(source: impl Read, schema: &GefcomSchema) -> Result<TimeSeries> {
    let mut rdr = reader(schema.delimiter, source)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let (tc, lc) = (column(&headers, &schema.timestamp_column)?, column(&headers, &schema.load_column)?);
    let temp_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| {
            h.strip_prefix(schema.temperature_prefix.as_str())
                .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
        })
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    let (mut ts, mut load, mut missing) = (Vec::new(), Vec::new(), Vec::new());
    let mut temps: Vec<Vec<f64>> = vec![Vec::new(); temp_cols.len()];
    let mut carried = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = line_of(&rec);
        let raw_ts = rec.get(tc).unwrap_or("");
        let stamp = NaiveDateTime::parse_from_str(raw_ts, &schema.timestamp_format)
            .map_err(|e| Error::Parse { line, msg: format!("timestamp {raw_ts:?}: {e}") })?;
        let raw_load = rec.get(lc).unwrap_or("");
        if raw_load.is_empty() && ts.is_empty() {
            continue;
        }
        ts.push(stamp);
        if raw_load.is_empty() {
            load.push(0.0);
            missing.push(true);
        } else {
            load.push(parse_f64(&rec, lc, &schema.load_column)?);
            missing.push(false);
        }
        for ((i, name), col) in temp_cols.iter().zip(temps.iter_mut()) {
            let v = if rec.get(*i).unwrap_or("").is_empty() {
                carried += 1;
                *col.last().ok_or_else(|| Error::Parse { line, msg: format!("first {name} value missing") })?
            } else {
                parse_f64(&rec, *i, name)?
            };
            col.push(v);
        }
    }
    if carried > 0 {
        log::warn!("{carried} missing temperature readings carried forward");
    }
    let names = temp_cols.into_iter().map(|(_, n)| n).collect();
    fill_gaps(ts, load, missing, temps, names)
}

/// Inserts missing rows for absent timestamps on the dominant spacing.
fn fill_gaps(
    ts: Vec<NaiveDateTime>,
    load: Vec<f64>,
    missing: Vec<bool>,
    temps: Vec<Vec<f64>>,
    names: Vec<String>,
) -> Result<TimeSeries> {
    ensure!(ts.len() >= 2, Data, "file holds fewer than two rows");
    let step = ts[1] - ts[0];
    ensure!(step > Duration::zero(), Data, "timestamps must increase (rows 1 and 2)");
    let mut out = TimeSeries {
        timestamps: Vec::with_capacity(ts.len()),
        load: Vec::with_capacity(ts.len()),
        missing: Vec::with_capacity(ts.len()),
        flagged: Vec::new(),
        temperatures: vec![Vec::with_capacity(ts.len()); temps.len()],
        temperature_names: names,
    };
    for i in 0..ts.len() {
        if let Some(&prev) = out.timestamps.last() {
            let gap = ts[i] - prev;
            ensure!(
                gap > Duration::zero() && gap.num_seconds() % step.num_seconds() == 0,
                Data,
                "timestamp {} breaks the {}-second grid",
                ts[i],
                step.num_seconds()
            );
            let mut t = prev + step;
            while t < ts[i] {
                out.timestamps.push(t);
                out.load.push(0.0);
                out.missing.push(true);
                for c in out.temperatures.iter_mut() {
                    let last = *c.last().unwrap();
                    c.push(last);
                }
                t += step;
            }
        }
        out.timestamps.push(ts[i]);
        out.load.push(load[i]);
        out.missing.push(missing[i]);
        for (dst, src) in out.temperatures.iter_mut().zip(&temps) {
            dst.push(src[i]);
        }
    }
    out.flagged = vec![false; out.len()];
    Ok(out)
}

const CACHE_MAGIC: &str = "# stlf-cache v1";
const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Writes an ingested series with a versioned header carrying the pipeline
/// hash.
pub fn write_cache(path: &Path, series: &TimeSeries, pipeline_hash: &str) -> Result<()> {
    ensure!(!series.has_missing(), Data, "only complete series are cached");
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{CACHE_MAGIC} pipeline={pipeline_hash}")?;
    let mut header = vec!["timestamp".to_string(), "load".into(), "flagged".into()];
    header.extend(series.temperature_names.iter().cloned());
    writeln!(out, "{}", header.join(","))?;
    for t in 0..series.len() {
        write!(out, "{},{},{}", series.timestamps[t].format(TS_FORMAT), series.load[t], u8::from(series.flagged[t]))?;
        for c in &series.temperatures {
            write!(out, ",{}", c[t])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Hash recorded in a cache file header.
pub fn cache_hash(path: &Path) -> Result<String> {
    let mut first = String::new();
    BufReader::new(fs::File::open(path)?).read_line(&mut first)?;
    first
        .trim_end()
        .strip_prefix(CACHE_MAGIC)
        .and_then(|rest| rest.trim().strip_prefix("pipeline="))
        .map(str::to_string)
        .ok_or_else(|| Error::Parse { line: 1, msg: "not a cache file".into() })
}

/// Reads a cache file, refusing it when its pipeline hash differs from
/// `expected_hash`.
pub fn read_cache(path: &Path, expected_hash: Option<&str>) -> Result<TimeSeries> {
    let hash = cache_hash(path)?;
    if let Some(h) = expected_hash {
        ensure!(hash == h, Data, "cache {} was built by pipeline {hash}, expected {h}", path.display());
    }
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().skip(1);
    let (_, header) = lines.next().ok_or_else(|| Error::Parse { line: 2, msg: "missing header".into() })?;
    let names: Vec<String> = header.split(',').skip(3).map(str::to_string).collect();
    let mut s = TimeSeries {
        timestamps: Vec::new(),
        load: Vec::new(),
        missing: Vec::new(),
        flagged: Vec::new(),
        temperatures: vec![Vec::new(); names.len()],
        temperature_names: names,
    };
    for (i, line) in lines {
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split(',').collect();
        ensure!(fields.len() == 3 + s.temperatures.len(), Data, "cache line {} has {} fields", i + 1, fields.len());
        s.timestamps.push(NaiveDateTime::parse_from_str(fields[0], TS_FORMAT).map_err(|e| bad(e.to_string()))?);
        s.load.push(fields[1].parse().map_err(|_| bad(format!("load {:?}", fields[1])))?);
        s.flagged.push(fields[2] == "1");
        s.missing.push(false);
        for (c, f) in s.temperatures.iter_mut().zip(&fields[3..]) {
            c.push(f.parse().map_err(|_| bad(format!("temperature {f:?}")))?);
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const IHEPC: &str = "Date;Time;Global_active_power;Global_reactive_power\n\
16/12/2006;17:24:00;4.216;0.418\n\
16/12/2006;17:25:00;?;?\n\
16/12/2006;17:27:00;3.666;0.528\n";

    #[test]
    fn ihepc_parses_and_fills_gaps() {
        let s = read_ihepc(IHEPC.as_bytes(), &IhepcSchema::default()).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.missing, vec![false, true, true, false]);
        assert_eq!(s.load[3], 3.666);
        assert_eq!(s.missing_fraction(), 0.5);
    }

    #[test]
    fn malformed_row_names_line() {
        let text = "Date;Time;Global_active_power\n16/12/2006;17:24:00;4.2\n16/12/2006;17:25:00;abc\n";
        match read_ihepc(text.as_bytes(), &IhepcSchema::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gefcom_reads_temperatures() {
        let text = "ZONEID,TIMESTAMP,LOAD,w1,w2\n\
1,1/1/2005 0:00,,40,41\n\
1,1/1/2005 1:00,3000,42,43\n\
1,1/1/2005 2:00,3100,,44\n";
        let s = read_gefcom(text.as_bytes(), &GefcomSchema::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.temperature_names, vec!["w1", "w2"]);
        assert_eq!(s.temperatures[0], vec![42.0, 42.0]);
        assert_eq!(s.load, vec![3000.0, 3100.0]);
    }

    #[test]
    fn cache_round_trip_is_lossless() {
        let text = "ZONEID,TIMESTAMP,LOAD,w1\n1,1/1/2005 0:00,3000.123456789,40.1\n1,1/1/2005 1:00,0.1,-3.3333333333333335\n";
        let mut s = read_gefcom(text.as_bytes(), &GefcomSchema::default()).unwrap();
        s.flagged[1] = true;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_cache(&p, &s, "abc123").unwrap();
        assert_eq!(cache_hash(&p).unwrap(), "abc123");
        assert_eq!(read_cache(&p, Some("abc123")).unwrap(), s);
        assert!(read_cache(&p, Some("other")).is_err());
    }
}
