//! Reader logs and code-series CSV files.
//!
//! Read log: `timestamp_s,epc,channel,sensor_code,rssi_dbm`, optionally
//! preceded by a `# fadsense read log v1` line. Code series:
//! `timestamp_s,channel,code`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::Finger;
use crate::signal::{CodeSeries, Sample, CODE_STORAGE_MAX};

pub const LOG_VERSION_LINE: &str = "# fadsense read log v1";
pub const LOG_HEADER: [&str; 5] = ["timestamp_s", "epc", "channel", "sensor_code", "rssi_dbm"];
pub const SERIES_HEADER: [&str; 3] = ["timestamp_s", "channel", "code"];

/// Per-channel series of one acquisition.
pub type SeriesSet = BTreeMap<Finger, CodeSeries>;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("line {line}: duplicate timestamp {t} on channel {channel}")]
    DuplicateTimestamp { line: u64, channel: Finger, t: f64 },
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("empty input: no data rows")]
    Empty,
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One tag read as reported by the reader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadLogRow {
    pub timestamp_s: f64,
    pub epc: String,
    pub channel: Finger,
    pub sensor_code: u16,
    pub rssi_dbm: Option<f64>,
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), LogError> {
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != expected {
        return Err(LogError::Header {
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(())
}

fn row_err(line: u64, msg: impl Into<String>) -> LogError {
    LogError::Row { line, msg: msg.into() }
}

fn parse_timestamp(line: u64, s: &str) -> Result<f64, LogError> {
    let t: f64 = s.parse().map_err(|_| row_err(line, format!("bad timestamp `{s}`")))?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(row_err(line, format!("timestamp {t} must be finite and non-negative")));
    }
    Ok(t)
}

fn parse_code(line: u64, s: &str) -> Result<u16, LogError> {
    let code: u32 = s.parse().map_err(|_| row_err(line, format!("bad sensor code `{s}`")))?;
    if code > u32::from(CODE_STORAGE_MAX) {
        return Err(row_err(line, format!("sensor code {code} outside [0, {CODE_STORAGE_MAX}]")));
    }
    Ok(code as u16)
}

/// Parses and validates every row of a read log.
pub fn read_log_rows<R: Read>(input: R) -> Result<Vec<ReadLogRow>, LogError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &LOG_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != LOG_HEADER.len() {
            return Err(row_err(line, format!("expected {} fields, got {}", LOG_HEADER.len(), rec.len())));
        }
        let channel: Finger = rec[2]
            .parse()
            .map_err(|e: crate::channel::ParseFingerError| row_err(line, e.to_string()))?;
        let rssi_dbm = match &rec[4] {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| row_err(line, format!("bad rssi `{s}`")))?),
        };
        rows.push((
            line,
            ReadLogRow {
                timestamp_s: parse_timestamp(line, &rec[0])?,
                epc: rec[1].to_string(),
                channel,
                sensor_code: parse_code(line, &rec[3])?,
                rssi_dbm,
            },
        ));
    }
    if rows.is_empty() {
        return Err(LogError::Empty);
    }
    // Duplicate detection needs the line of the offending row.
    let mut seen: BTreeMap<Finger, Vec<(f64, u64)>> = BTreeMap::new();
    for (line, r) in &rows {
        seen.entry(r.channel).or_default().push((r.timestamp_s, *line));
    }
    for (channel, mut ts) in seen {
        ts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some(w) = ts.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(LogError::DuplicateTimestamp {
                line: w[1].1,
                channel,
                t: w[1].0,
            });
        }
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Groups rows by channel, each series sorted by timestamp.
pub fn group_rows(rows: &[ReadLogRow]) -> SeriesSet {
    group_samples(rows)
        .into_iter()
        .map(|(ch, samples)| {
            let s = CodeSeries::new(ch, samples).expect("rows validated: unique timestamps and codes in range");
            (ch, s)
        })
        .collect()
}

/// Reads a log into per-channel series.
pub fn ingest_log<R: Read>(input: R) -> Result<SeriesSet, LogError> {
    Ok(group_rows(&read_log_rows(input)?))
}

pub fn ingest_log_file(path: &Path) -> Result<SeriesSet, LogError> {
    let f = File::open(path).map_err(|source| LogError::File {
        path: path.display().to_string(),
        source,
    })?;
    ingest_log(BufReader::new(f))
}

pub fn write_log(rows: &[ReadLogRow]) -> String {
    let mut out = String::new();
    out.push_str(LOG_VERSION_LINE);
    out.push('\n');
    out.push_str(&LOG_HEADER.join(","));
    out.push('\n');
    for r in rows {
        let rssi = r.rssi_dbm.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", r.timestamp_s, r.epc, r.channel, r.sensor_code, rssi));
    }
    out
}

/// EPC-like tag identifier for a subject's fingertip sensor.
pub fn tag_epc(subject: u32, channel: Finger) -> String {
    format!("E2801170{:08X}{:02X}", subject, channel.index() + 1)
}

/// Flattens series into read-log rows, channel by channel.
pub fn rows_from_series(set: &SeriesSet, subject: u32) -> Vec<ReadLogRow> {
    set.values()
        .flat_map(|s| {
            s.samples().iter().map(move |x| ReadLogRow {
                timestamp_s: x.t,
                epc: tag_epc(subject, s.channel()),
                channel: s.channel(),
                sensor_code: x.code,
                rssi_dbm: None,
            })
        })
        .collect()
}

pub fn write_series_csv(set: &SeriesSet) -> String {
    let mut out = SERIES_HEADER.join(",");
    out.push('\n');
    for s in set.values() {
        for x in s.samples() {
            out.push_str(&format!("{},{},{}\n", x.t, s.channel(), x.code));
        }
    }
    out
}

pub fn read_series_csv<R: Read>(input: R) -> Result<SeriesSet, LogError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &SERIES_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != SERIES_HEADER.len() {
            return Err(row_err(line, "expected 3 fields"));
        }
        let channel: Finger = rec[1]
            .parse()
            .map_err(|e: crate::channel::ParseFingerError| row_err(line, e.to_string()))?;
        rows.push(ReadLogRow {
            timestamp_s: parse_timestamp(line, &rec[0])?,
            epc: String::new(),
            channel,
            sensor_code: parse_code(line, &rec[2])?,
            rssi_dbm: None,
        });
    }
    if rows.is_empty() {
        return Err(LogError::Empty);
    }
    group_samples(&rows)
        .into_iter()
        .map(|(ch, samples)| {
            CodeSeries::new(ch, samples)
                .map(|s| (ch, s))
                .map_err(|e| row_err(0, format!("channel {ch}: {e}")))
        })
        .collect()
}

fn group_samples(rows: &[ReadLogRow]) -> BTreeMap<Finger, Vec<Sample>> {
    let mut by: BTreeMap<Finger, Vec<Sample>> = BTreeMap::new();
    for r in rows {
        by.entry(r.channel).or_default().push(Sample {
            t: r.timestamp_s,
            code: r.sensor_code,
        });
    }
    for v in by.values_mut() {
        v.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    by
}
