//! File formats: trial records, fingerprint JSON, plot data and SVG charts
//! (Kiviat radar, CCD bars, amplitude spectrum), all written atomically.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::channel::{Finger, CHANNELS};
use crate::classify::{ReliabilityReport, TrialRecord};
use crate::fingerprint::{Fingerprint, FingerprintRecord};
use crate::log::{ingest_log_file, rows_from_series, write_log, LogError};
use crate::population::{air_log_path, PopulationData};
use crate::signal::SpectrumBin;

pub const RECORDS_HEADER: [&str; 9] = ["subject", "material", "trial", "I", "II", "III", "IV", "V", "log"];
pub const RECORDS_FILE: &str = "records.csv";

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Log {
        path: String,
        #[source]
        source: LogError,
    },
    #[error("records line {line}: {msg}")]
    Record { line: u64, msg: String },
    #[error("nothing to export: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `contents` to a sibling temporary file and renames it over `path`,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), ExportError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn records_to_csv(records: &[TrialRecord]) -> String {
    let mut out = RECORDS_HEADER.join(",");
    out.push('\n');
    for r in records {
        let flags: Vec<&str> = r.responsive.iter().map(|&b| if b { "1" } else { "0" }).collect();
        let _ = writeln!(out, "{},{},{},{},{}", r.subject, r.material, r.trial, flags.join(","), r.log);
    }
    out
}

pub fn records_from_csv<R: Read>(input: R) -> Result<Vec<TrialRecord>, ExportError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let head: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if head != RECORDS_HEADER {
        return Err(ExportError::Record {
            line: 1,
            msg: format!("expected header `{}`", RECORDS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| ExportError::Record { line, msg };
        if rec.len() != RECORDS_HEADER.len() {
            return Err(bad(format!("expected {} fields", RECORDS_HEADER.len())));
        }
        let int = |i: usize| {
            rec[i]
                .parse::<u32>()
                .map_err(|_| bad(format!("bad {} `{}`", RECORDS_HEADER[i], &rec[i])))
        };
        let mut responsive = [false; CHANNELS];
        for (k, slot) in responsive.iter_mut().enumerate() {
            *slot = match &rec[3 + k] {
                "1" => true,
                "0" => false,
                other => return Err(bad(format!("responsive flag must be 0 or 1, got `{other}`"))),
            };
        }
        out.push(TrialRecord {
            subject: int(0)?,
            material: rec[1].to_string(),
            trial: int(2)?,
            responsive,
            log: rec[8].to_string(),
        });
    }
    Ok(out)
}

pub fn records_to_json(records: &[TrialRecord]) -> Result<String, ExportError> {
    Ok(serde_json::to_string_pretty(records)? + "\n")
}

pub fn records_from_json(text: &str) -> Result<Vec<TrialRecord>, ExportError> {
    Ok(serde_json::from_str(text)?)
}

pub fn fingerprints_to_json(fps: &[Fingerprint]) -> Result<String, ExportError> {
    let recs: Vec<FingerprintRecord> = fps.iter().map(Fingerprint::to_record).collect();
    Ok(serde_json::to_string_pretty(&recs)? + "\n")
}

pub fn fingerprints_from_json(text: &str) -> Result<Vec<FingerprintRecord>, ExportError> {
    Ok(serde_json::from_str(text)?)
}

/// Writes records, air logs and trial logs under `dir`; returns the paths
/// written, records file first.
pub fn write_population(dir: &Path, data: &PopulationData) -> Result<Vec<PathBuf>, ExportError> {
    let mut written = Vec::new();
    let rec_path = dir.join(RECORDS_FILE);
    write_atomic(&rec_path, records_to_csv(&data.records).as_bytes())?;
    written.push(rec_path);
    for (subject, set) in &data.air {
        let p = dir.join(air_log_path(*subject));
        write_atomic(&p, write_log(&rows_from_series(set, *subject)).as_bytes())?;
        written.push(p);
    }
    for r in &data.records {
        let p = dir.join(&r.log);
        write_atomic(&p, write_log(&rows_from_series(&data.trials[&r.log], r.subject)).as_bytes())?;
        written.push(p);
    }
    Ok(written)
}

/// Reads back a directory written by [`write_population`]. Trial logs with
/// no rows stand for hands where no finger answered.
pub fn read_population(dir: &Path) -> Result<PopulationData, ExportError> {
    let rec_path = dir.join(RECORDS_FILE);
    let text = fs::read_to_string(&rec_path).map_err(io_err(&rec_path))?;
    let records = records_from_csv(text.as_bytes())?;
    let mut data = PopulationData {
        records,
        air: Default::default(),
        trials: Default::default(),
    };
    let load = |rel: &str| -> Result<crate::log::SeriesSet, ExportError> {
        let p = dir.join(rel);
        let log_err = |source| ExportError::Log {
            path: p.display().to_string(),
            source,
        };
        match ingest_log_file(&p) {
            Err(LogError::Empty) => Ok(Default::default()),
            other => other.map_err(log_err),
        }
    };
    for r in &data.records {
        if let std::collections::btree_map::Entry::Vacant(e) = data.air.entry(r.subject) {
            e.insert(load(&air_log_path(r.subject))?);
        }
        if !data.trials.contains_key(&r.log) {
            data.trials.insert(r.log.clone(), load(&r.log)?);
        }
    }
    Ok(data)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const KIVIAT_SIZE: f64 = 400.0;
const KIVIAT_RADIUS: f64 = 150.0;

fn fmt(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Vertices of a fingerprint polygon on the radar chart, finger I at 12
/// o'clock and the rest clockwise. Negative values sit at the centre.
pub fn kiviat_vertices(fp: &Fingerprint, scale: f64) -> [(f64, f64); CHANNELS] {
    let c = KIVIAT_SIZE / 2.0;
    std::array::from_fn(|i| {
        let angle = -std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::TAU / CHANNELS as f64;
        let r = KIVIAT_RADIUS * (fp.values[i].max(0.0) / scale);
        (c + r * angle.cos(), c + r * angle.sin())
    })
}

/// Shoelace area of a polygon.
pub fn polygon_area(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

fn kiviat_scale(fps: &[Fingerprint]) -> f64 {
    let m = fps.iter().flat_map(|f| f.values).fold(0.0, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Radar chart with one polygon per fingerprint. Markers of imputed
/// channels are drawn unfilled.
pub fn kiviat_svg(fps: &[Fingerprint]) -> Result<String, ExportError> {
    if fps.is_empty() {
        return Err(ExportError::Empty("no fingerprints"));
    }
    let scale = kiviat_scale(fps);
    let c = KIVIAT_SIZE / 2.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{KIVIAT_SIZE}" height="{KIVIAT_SIZE}" viewBox="0 0 {KIVIAT_SIZE} {KIVIAT_SIZE}">"#
    );
    let _ = writeln!(s, r##"  <g class="axes" stroke="#999" stroke-width="1">"##);
    let outer = kiviat_vertices(
        &Fingerprint {
            values: [scale; CHANNELS],
            imputed: [false; CHANNELS],
            material: None,
            n_responsive: CHANNELS,
        },
        scale,
    );
    for (f, (x, y)) in Finger::ALL.iter().zip(outer) {
        let _ = writeln!(s, r#"    <line x1="{}" y1="{}" x2="{}" y2="{}"/>"#, fmt(c), fmt(c), fmt(x), fmt(y));
        let (lx, ly) = (c + 1.1 * (x - c), c + 1.1 * (y - c));
        let _ = writeln!(
            s,
            r#"    <text x="{}" y="{}" text-anchor="middle" stroke="none">{f}</text>"#,
            fmt(lx),
            fmt(ly)
        );
    }
    let _ = writeln!(s, "  </g>");
    for (k, fp) in fps.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts = kiviat_vertices(fp, scale);
        let list: Vec<String> = pts.iter().map(|(x, y)| format!("{},{}", fmt(*x), fmt(*y))).collect();
        let label = fp.material.as_deref().unwrap_or("");
        let _ = writeln!(s, r#"  <g class="fingerprint" data-index="{k}" data-material="{label}">"#);
        let _ = writeln!(
            s,
            r#"    <polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="2"/>"#,
            list.join(" ")
        );
        for (i, (x, y)) in pts.iter().enumerate() {
            let fill = if fp.imputed[i] { "none" } else { color };
            let _ = writeln!(
                s,
                r#"    <circle cx="{}" cy="{}" r="5" data-channel="{}" data-imputed="{}" fill="{fill}" stroke="{color}" stroke-width="2"/>"#,
                fmt(*x),
                fmt(*y),
                Finger::ALL[i],
                fp.imputed[i]
            );
        }
        let _ = writeln!(s, "  </g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Data twin of the radar chart: one row per fingerprint.
pub fn kiviat_csv(fps: &[Fingerprint]) -> String {
    let mut out = String::from("index,material,I,II,III,IV,V,imputed_I,imputed_II,imputed_III,imputed_IV,imputed_V,f_bar,sigma_f\n");
    for (k, fp) in fps.iter().enumerate() {
        let vals: Vec<String> = fp.values.iter().map(|v| v.to_string()).collect();
        let imp: Vec<&str> = fp.imputed.iter().map(|&b| if b { "1" } else { "0" }).collect();
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{}",
            fp.material.as_deref().unwrap_or(""),
            vals.join(","),
            imp.join(","),
            fp.average(),
            fp.propagated_uncertainty()
        );
    }
    out
}

/// Writes the radar chart to `path` and its CSV twin next to it.
pub fn export_kiviat(fps: &[Fingerprint], path: &Path) -> Result<(PathBuf, PathBuf), ExportError> {
    let svg = kiviat_svg(fps)?;
    let csv_path = path.with_extension("csv");
    write_atomic(path, svg.as_bytes())?;
    write_atomic(&csv_path, kiviat_csv(fps).as_bytes())?;
    Ok((path.to_path_buf(), csv_path))
}

/// Bar chart of CCD(m), m = 1..5.
pub fn ccd_svg(report: &ReliabilityReport) -> String {
    let (w, h, pad) = (360.0, 240.0, 30.0);
    let bar = (w - 2.0 * pad) / CHANNELS as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        s,
        r##"  <line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="#333"/>"##,
        h - pad,
        w - pad,
        h - pad
    );
    for (i, v) in report.ccd.iter().enumerate() {
        let bh = (h - 2.0 * pad) * v / 100.0;
        let x = pad + i as f64 * bar + 4.0;
        let _ = writeln!(
            s,
            r##"  <rect x="{}" y="{}" width="{}" height="{}" fill="#1f77b4" data-m="{}" data-percent="{v}"/>"##,
            fmt(x),
            fmt(h - pad - bh),
            fmt(bar - 8.0),
            fmt(bh),
            i + 1
        );
        let _ = writeln!(
            s,
            r#"  <text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            fmt(x + bar / 2.0 - 4.0),
            fmt(h - pad / 3.0),
            i + 1
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn spectrum_csv(bins: &[SpectrumBin]) -> String {
    let mut out = String::from("freq_hz,amplitude\n");
    for b in bins {
        let _ = writeln!(out, "{},{}", b.freq_hz, b.amplitude);
    }
    out
}

/// Stem plot of an amplitude spectrum.
pub fn spectrum_svg(bins: &[SpectrumBin]) -> String {
    let (w, h, pad) = (480.0, 240.0, 30.0);
    let fmax = bins.last().map_or(1.0, |b| b.freq_hz).max(f64::MIN_POSITIVE);
    let amax = bins.iter().map(|b| b.amplitude).fold(0.0, f64::max);
    let amax = if amax > 0.0 { amax } else { 1.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        s,
        r##"  <line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="#333"/>"##,
        h - pad,
        w - pad,
        h - pad
    );
    for b in bins {
        let x = pad + (w - 2.0 * pad) * b.freq_hz / fmax;
        let y = h - pad - (h - 2.0 * pad) * b.amplitude / amax;
        let _ = writeln!(
            s,
            r##"  <line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#d62728" data-freq="{}"/>"##,
            fmt(x),
            fmt(h - pad),
            fmt(x),
            fmt(y),
            b.freq_hz
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(values: [f64; 5], imputed: [bool; 5], material: &str) -> Fingerprint {
        Fingerprint {
            values,
            imputed,
            material: Some(material.into()),
            n_responsive: imputed.iter().filter(|&&i| !i).count(),
        }
    }

    #[test]
    fn zero_fingerprint_collapses_to_centre() {
        let z = fp([0.0; 5], [false; 5], "air");
        let svg = kiviat_svg(std::slice::from_ref(&z)).unwrap();
        assert!(svg.contains("points=\"200.00,200.00 200.00,200.00"));
        assert_eq!(polygon_area(&kiviat_vertices(&z, 1.0)), 0.0);
    }

    #[test]
    fn imputed_channel_marker_is_unfilled() {
        let f = fp([10.0, 20.0, 25.0, 30.0, 40.0], [false, false, true, false, false], "x");
        let svg = kiviat_svg(&[f]).unwrap();
        let marker = svg.lines().find(|l| l.contains("data-channel=\"III\"")).unwrap();
        assert!(marker.contains("fill=\"none\""));
        assert!(marker.contains("data-imputed=\"true\""));
        let other = svg.lines().find(|l| l.contains("data-channel=\"II\"")).unwrap();
        assert!(!other.contains("fill=\"none\""));
    }

    #[test]
    fn records_round_trip() {
        let recs = vec![TrialRecord {
            subject: 3,
            material: "olive-oil".into(),
            trial: 2,
            responsive: [true, false, true, false, false],
            log: "trials/s03_olive-oil_t2.csv".into(),
        }];
        assert_eq!(records_from_csv(records_to_csv(&recs).as_bytes()).unwrap(), recs);
        assert_eq!(records_from_json(&records_to_json(&recs).unwrap()).unwrap(), recs);
        assert!(records_from_csv("subject,material\n".as_bytes()).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
