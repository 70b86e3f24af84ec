//! Inter-sensor coupling: power-wave (generalized) scattering matrix of the
//! fingertip antenna ports, normalized coupling maps, and the simplified
//! turn-on power budget.

use std::fmt::Write as _;
use std::io::Read;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::Finger;

/// Chip impedance assumed for every port when none is given (Ω).
pub const DEFAULT_CHIP_IMPEDANCE: Complex64 = Complex64::new(2.8, -76.0);

/// Relative tolerance for `z[j][k] == z[k][j]` on ingestion.
pub const RECIPROCITY_TOLERANCE: f64 = 1e-9;

/// Condition number above which `Z + H` is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, thiserror::Error)]
pub enum CouplingError {
    #[error("impedance matrix must be square and non-empty, got {rows}x{cols}")]
    Shape { rows: usize, cols: usize },
    #[error("impedance matrix not reciprocal at ({row}, {col}): {a} vs {b}")]
    NotReciprocal {
        row: usize,
        col: usize,
        a: Complex64,
        b: Complex64,
    },
    #[error("{expected} port labels expected, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error("{expected} port loads expected, got {got}")]
    LoadCount { expected: usize, got: usize },
    #[error("port load resistance must be positive, got {0}")]
    NonPositiveResistance(f64),
    #[error("Z + H is singular (condition estimate {condition:.3e})")]
    Singular { condition: f64 },
    #[error("coupling matrix is identically zero")]
    ZeroMatrix,
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Multiport antenna impedance matrix at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceMatrix {
    z: DMatrix<Complex64>,
    frequency: f64,
    port_labels: Vec<String>,
}

impl ImpedanceMatrix {
    pub fn new(z: DMatrix<Complex64>, frequency: f64, port_labels: Vec<String>) -> Result<Self, CouplingError> {
        let (rows, cols) = z.shape();
        if rows == 0 || rows != cols {
            return Err(CouplingError::Shape { rows, cols });
        }
        if port_labels.len() != rows {
            return Err(CouplingError::LabelCount {
                expected: rows,
                got: port_labels.len(),
            });
        }
        if !(frequency > 0.0) {
            return Err(CouplingError::NonPositive {
                name: "frequency",
                value: frequency,
            });
        }
        for j in 0..rows {
            for k in (j + 1)..rows {
                let (a, b) = (z[(j, k)], z[(k, j)]);
                let scale = a.norm().max(b.norm());
                if (a - b).norm() > RECIPROCITY_TOLERANCE * scale {
                    return Err(CouplingError::NotReciprocal { row: j, col: k, a, b });
                }
            }
        }
        Ok(ImpedanceMatrix { z, frequency, port_labels })
    }

    pub fn z(&self) -> &DMatrix<Complex64> {
        &self.z
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn port_labels(&self) -> &[String] {
        &self.port_labels
    }

    pub fn ports(&self) -> usize {
        self.z.nrows()
    }

    /// Parses the plain-text matrix format:
    ///
    /// ```text
    /// # comment
    /// frequency_hz = 867000000
    /// ports = I II III IV V
    /// 3.1+75.2j 0.08-0.11j ...
    /// ```
    pub fn read<R: Read>(mut reader: R) -> Result<Self, CouplingError> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let mut frequency = None;
        let mut labels: Option<Vec<String>> = None;
        let mut rows: Vec<Vec<Complex64>> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| CouplingError::Parse { line: line_no, msg };
            if let Some((key, value)) = line.split_once('=') {
                match key.trim() {
                    "frequency_hz" => {
                        let f: f64 = value.trim().parse().map_err(|_| err(format!("bad frequency `{}`", value.trim())))?;
                        frequency = Some(f);
                    }
                    "ports" => labels = Some(value.split_whitespace().map(str::to_string).collect()),
                    other => return Err(err(format!("unknown header key `{other}`"))),
                }
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| parse_complex(tok).map_err(&err))
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(err(format!("row has {} entries, expected {}", row.len(), first.len())));
                }
            }
            rows.push(row);
        }
        let frequency = frequency.ok_or(CouplingError::Parse {
            line: 0,
            msg: "missing `frequency_hz` header".into(),
        })?;
        let n = rows.len();
        let labels = labels.unwrap_or_else(|| (1..=n).map(|i| i.to_string()).collect());
        let cols = rows.first().map_or(0, Vec::len);
        if n != cols || n == 0 {
            return Err(CouplingError::Shape { rows: n, cols });
        }
        let z = DMatrix::from_fn(n, n, |j, k| rows[j][k]);
        ImpedanceMatrix::new(z, frequency, labels)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "frequency_hz = {}", self.frequency).unwrap();
        writeln!(out, "ports = {}", self.port_labels.join(" ")).unwrap();
        for j in 0..self.ports() {
            let row: Vec<String> = (0..self.ports()).map(|k| format_complex(self.z[(j, k)])).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }
}

/// Parses `re+imj`, `re-imj`, `re` or `imj`.
pub fn parse_complex(tok: &str) -> Result<Complex64, String> {
    let bad = || format!("bad complex token `{tok}`");
    let t = tok.trim();
    if let Some(body) = t.strip_suffix('j') {
        // Split at the last sign that is not a leading sign or an exponent sign.
        let bytes = body.as_bytes();
        let split = (1..bytes.len())
            .rev()
            .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
        match split {
            Some(i) => {
                let re: f64 = body[..i].parse().map_err(|_| bad())?;
                let im: f64 = body[i..].parse().map_err(|_| bad())?;
                Ok(Complex64::new(re, im))
            }
            None => {
                let im: f64 = match body {
                    "" | "+" => 1.0,
                    "-" => -1.0,
                    b => b.parse().map_err(|_| bad())?,
                };
                Ok(Complex64::new(0.0, im))
            }
        }
    } else {
        let re: f64 = t.parse().map_err(|_| bad())?;
        Ok(Complex64::new(re, 0.0))
    }
}

pub fn format_complex(z: Complex64) -> String {
    if z.im.is_sign_negative() {
        format!("{}-{}j", z.re, -z.im)
    } else {
        format!("{}+{}j", z.re, z.im)
    }
}

/// Complex termination of one port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortLoad {
    pub z_c: Complex64,
}

impl PortLoad {
    pub fn new(z_c: Complex64) -> Result<Self, CouplingError> {
        if !(z_c.re > 0.0) {
            return Err(CouplingError::NonPositiveResistance(z_c.re));
        }
        Ok(PortLoad { z_c })
    }
}

impl Default for PortLoad {
    fn default() -> Self {
        PortLoad {
            z_c: DEFAULT_CHIP_IMPEDANCE,
        }
    }
}

impl FromStr for PortLoad {
    type Err = CouplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let z = parse_complex(s).map_err(|msg| CouplingError::Parse { line: 0, msg })?;
        PortLoad::new(z)
    }
}

/// Condition number of `a` from its singular values.
pub fn condition_number(a: &DMatrix<Complex64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Generalized scattering matrix `K = G (Z − H⁺)(Z + H)⁻¹ G⁻¹` with
/// `H = diag(z_c)` and `G = diag(0.5·Re(z_c)^(−1/2))`.
pub fn kurokawa_matrix(z: &ImpedanceMatrix, loads: &[PortLoad]) -> Result<DMatrix<Complex64>, CouplingError> {
    let n = z.ports();
    if loads.len() != n {
        return Err(CouplingError::LoadCount {
            expected: n,
            got: loads.len(),
        });
    }
    for l in loads {
        if !(l.z_c.re > 0.0) {
            return Err(CouplingError::NonPositiveResistance(l.z_c.re));
        }
    }
    let h = DMatrix::from_fn(n, n, |j, k| if j == k { loads[j].z_c } else { Complex64::default() });
    let sum = z.z() + &h;
    let condition = condition_number(&sum);
    if !(condition < MAX_CONDITION) {
        return Err(CouplingError::Singular { condition });
    }
    let inv = sum.lu().try_inverse().ok_or(CouplingError::Singular { condition })?;
    let diff = z.z() - h.adjoint();
    let g: Vec<f64> = loads.iter().map(|l| 0.5 / l.z_c.re.sqrt()).collect();
    let core = diff * inv;
    Ok(DMatrix::from_fn(n, n, |j, k| core[(j, k)] * (g[j] / g[k])))
}

/// Coupling magnitudes scaled so the largest entry reads 100.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingReport {
    pub k: DMatrix<Complex64>,
    pub normalized_magnitudes: DMatrix<f64>,
    /// Largest off-diagonal normalized entry, as a fraction of the maximum.
    pub max_offdiag_ratio: f64,
}

pub fn normalize_coupling(k: &DMatrix<Complex64>) -> Result<CouplingReport, CouplingError> {
    let mags = k.map(|c| c.norm());
    let max = mags.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(CouplingError::ZeroMatrix);
    }
    let normalized = mags.map(|m| m / max * 100.0);
    let n = normalized.nrows();
    let off = (0..n)
        .flat_map(|j| (0..n).filter(move |&c| c != j).map(move |c| (j, c)))
        .map(|idx| normalized[idx])
        .fold(0.0f64, f64::max);
    Ok(CouplingReport {
        k: k.clone(),
        normalized_magnitudes: normalized,
        max_offdiag_ratio: off / 100.0,
    })
}

/// Normalizes a real magnitude matrix, e.g. a published coupling map.
pub fn normalize_magnitudes(m: &DMatrix<f64>) -> Result<CouplingReport, CouplingError> {
    normalize_coupling(&m.map(|x| Complex64::new(x.abs(), 0.0)))
}

impl CouplingReport {
    /// CSV with a `port` column followed by one column per port.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let n = self.normalized_magnitudes.nrows();
        let mut out = String::from("port");
        for l in labels.iter().take(n) {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (j, label) in labels.iter().enumerate().take(n) {
            out.push_str(label);
            for k in 0..n {
                write!(out, ",{}", self.normalized_magnitudes[(j, k)]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self, labels: &[String]) -> String {
        let n = self.normalized_magnitudes.nrows();
        let mut worst = (0, 0, 0.0);
        for j in 0..n {
            for k in j + 1..n {
                let v = self.normalized_magnitudes[(j, k)].max(self.normalized_magnitudes[(k, j)]);
                if v > worst.2 {
                    worst = (j, k, v);
                }
            }
        }
        let mut out = String::new();
        writeln!(out, "ports: {}", n).unwrap();
        writeln!(out, "max off-diagonal ratio: {:.4}", self.max_offdiag_ratio).unwrap();
        if n > 1 {
            writeln!(
                out,
                "strongest coupling: {} <-> {} ({:.2} / 100)",
                labels[worst.0], labels[worst.1], worst.2
            )
            .unwrap();
        }
        let verdict = if self.max_offdiag_ratio <= 0.03 {
            "negligible"
        } else {
            "significant"
        };
        writeln!(out, "cross-sensitivity: {verdict}").unwrap();
        out
    }
}

/// Reads a `port,<label>...` magnitude CSV as written by [`CouplingReport::to_csv`].
pub fn read_magnitude_csv<R: Read>(reader: R) -> Result<(Vec<String>, DMatrix<f64>), CouplingError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let labels: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
    let n = labels.len();
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != n + 1 {
            return Err(CouplingError::Parse {
                line,
                msg: format!("expected {} fields, got {}", n + 1, rec.len()),
            });
        }
        for field in rec.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| CouplingError::Parse {
                line,
                msg: format!("bad magnitude `{field}`"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows != n || n == 0 {
        return Err(CouplingError::Shape { rows, cols: n });
    }
    Ok((labels, DMatrix::from_row_slice(n, n, &values)))
}

/// Published normalized coupling map of the five fingertip ports at 867 MHz.
pub const EXAMPLE_COUPLING_CSV: &str = include_str!("../data/coupling_normalized_5port.csv");
/// Synthetic five-port impedance matrix in the text format of [`ImpedanceMatrix::read`].
pub const EXAMPLE_ZMAT: &str = include_str!("../data/example_5port.zmat");
/// Per-finger transducer gains used for the turn-on screening.
pub const TRANSDUCER_GAINS_CSV: &str = include_str!("../data/transducer_gains.csv");

/// Minimum reader feed power (W) at which the chip wakes up:
/// `sensitivity / (gain · τ)`.
pub fn turn_on_power(tau: f64, transducer_gain: f64, ic_sensitivity: f64) -> Result<f64, CouplingError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(CouplingError::NonPositive { name: "tau", value: tau });
    }
    if !(transducer_gain > 0.0) {
        return Err(CouplingError::NonPositive {
            name: "transducer gain",
            value: transducer_gain,
        });
    }
    if !(ic_sensitivity > 0.0) {
        return Err(CouplingError::NonPositive {
            name: "IC sensitivity",
            value: ic_sensitivity,
        });
    }
    Ok(ic_sensitivity / (transducer_gain * tau))
}

pub fn watts_to_dbm(p: f64) -> f64 {
    10.0 * (p / 1e-3).log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Chip sensitivity assumed by the shipped gain table (W), i.e. −20 dBm.
pub const DEFAULT_IC_SENSITIVITY: f64 = 10e-6;

/// Reads `channel,transducer_gain_db` rows into linear gains.
pub fn read_transducer_gains<R: Read>(reader: R) -> Result<Vec<(Finger, f64)>, CouplingError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let perr = |msg: String| CouplingError::Parse { line, msg };
        let finger: Finger = rec
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|e: crate::channel::ParseFingerError| perr(e.to_string()))?;
        let db: f64 = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr("bad transducer_gain_db".into()))?;
        out.push((finger, db_to_linear(db)));
    }
    Ok(out)
}
