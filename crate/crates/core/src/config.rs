//! Session configuration: `key = value [unit]` text with explicit units.
//!
//! ```text
//! freq = 867 MHz
//! c_min = 1.9 pF
//! antenna.III.g_a = 0.4 mS
//! antenna.*.eps_half = 19
//! ```

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{Finger, CHANNELS};
use crate::coupling::{parse_complex, PortLoad, DEFAULT_IC_SENSITIVITY};
use crate::fingerprint::PRESSURE_FACTOR;
use crate::ic::{AntennaModel, AutoTuneIC, IcError, EU_FREQUENCY_HZ};
use crate::signal::{Estimator, FluctuationModel, DEFAULT_M_INF, DEFAULT_SAMPLE_PERIOD, DEFAULT_SAWTOOTH_FREQUENCY, DEFAULT_WINDOW};

/// Shipped defaults file.
pub const DEFAULTS_CONF: &str = include_str!("../data/defaults.conf");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` expects {expected}, got `{got}`")]
    Unit {
        line: usize,
        key: String,
        expected: &'static str,
        got: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<IcError> for ConfigError {
    fn from(e: IcError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

/// Everything a processing session needs, in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub frequency: f64,
    pub ic: AutoTuneIC,
    pub antennas: [AntennaModel; CHANNELS],
    pub load: PortLoad,
    pub fluctuation: FluctuationModel,
    pub window: usize,
    pub m_inf: usize,
    pub convergence_tolerance: f64,
    pub pressure_factor: f64,
    pub estimator: Estimator,
    pub guard_band: f64,
    pub ic_sensitivity: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig::parse(DEFAULTS_CONF).expect("shipped defaults parse")
    }
}

#[derive(Clone, Copy)]
enum Quantity {
    Frequency,
    Capacitance,
    Conductance,
    Time,
    Power,
    Plain,
}

impl Quantity {
    fn describe(self) -> &'static str {
        match self {
            Quantity::Frequency => "a frequency (Hz, kHz, MHz, GHz)",
            Quantity::Capacitance => "a capacitance (F, nF, pF, fF)",
            Quantity::Conductance => "a conductance (S, mS, uS)",
            Quantity::Time => "a time (s, ms)",
            Quantity::Power => "a power (W, mW, uW, dBm)",
            Quantity::Plain => "a unitless number",
        }
    }

    fn scale(self, unit: &str) -> Option<Box<dyn Fn(f64) -> f64>> {
        let k = |s: f64| -> Option<Box<dyn Fn(f64) -> f64>> { Some(Box::new(move |x| x * s)) };
        match (self, unit) {
            (Quantity::Frequency, "Hz") => k(1.0),
            (Quantity::Frequency, "kHz") => k(1e3),
            (Quantity::Frequency, "MHz") => k(1e6),
            (Quantity::Frequency, "GHz") => k(1e9),
            (Quantity::Capacitance, "F") => k(1.0),
            (Quantity::Capacitance, "nF") => k(1e-9),
            (Quantity::Capacitance, "pF") => k(1e-12),
            (Quantity::Capacitance, "fF") => k(1e-15),
            (Quantity::Conductance, "S") => k(1.0),
            (Quantity::Conductance, "mS") => k(1e-3),
            (Quantity::Conductance, "uS") => k(1e-6),
            (Quantity::Time, "s") => k(1.0),
            (Quantity::Time, "ms") => k(1e-3),
            (Quantity::Power, "W") => k(1.0),
            (Quantity::Power, "mW") => k(1e-3),
            (Quantity::Power, "uW") => k(1e-6),
            (Quantity::Power, "dBm") => Some(Box::new(|x| 1e-3 * 10f64.powf(x / 10.0))),
            (Quantity::Plain, "") => k(1.0),
            _ => None,
        }
    }
}

fn decimal_exponent(unit: &str) -> Option<i32> {
    match unit.chars().next() {
        _ if unit == "dBm" => None,
        Some('G') => Some(9),
        Some('M') => Some(6),
        Some('k') => Some(3),
        Some('m') => Some(-3),
        Some('u') => Some(-6),
        Some('n') => Some(-9),
        Some('p') => Some(-12),
        Some('f') => Some(-15),
        _ => Some(0),
    }
}

struct Line<'a> {
    no: usize,
    key: &'a str,
    value: &'a str,
}

impl Line<'_> {
    fn quantity(&self, q: Quantity) -> Result<f64, ConfigError> {
        let mut parts = self.value.split_whitespace();
        let num = parts.next().unwrap_or("");
        let unit = parts.next().unwrap_or("");
        let unit_err = || ConfigError::Unit {
            line: self.no,
            key: self.key.to_string(),
            expected: q.describe(),
            got: self.value.to_string(),
        };
        if parts.next().is_some() {
            return Err(unit_err());
        }
        let x: f64 = num.parse().map_err(|_| unit_err())?;
        let f = q.scale(unit).ok_or_else(unit_err)?;
        // Fold decimal prefixes into the literal so `3.1 fF` is the double nearest 3.1e-15.
        if let Some(exp) = decimal_exponent(unit) {
            if !num.contains(['e', 'E']) {
                return format!("{num}e{exp}").parse().map_err(|_| unit_err());
            }
        }
        Ok(f(x))
    }

    fn integer<T: std::str::FromStr>(&self) -> Result<T, ConfigError> {
        self.value.trim().parse().map_err(|_| ConfigError::Unit {
            line: self.no,
            key: self.key.to_string(),
            expected: "an integer",
            got: self.value.to_string(),
        })
    }
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        SessionConfig::parse(&text)
    }

    /// Parses a configuration; keys not mentioned keep their built-in defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut frequency = EU_FREQUENCY_HZ;
        let mut ic = AutoTuneIC::default();
        let mut load = PortLoad::default();
        let mut fluct = FluctuationModel {
            sawtooth_frequency: DEFAULT_SAWTOOTH_FREQUENCY,
            sample_period: DEFAULT_SAMPLE_PERIOD,
            ..FluctuationModel::default()
        };
        let mut window = DEFAULT_WINDOW;
        let mut m_inf = DEFAULT_M_INF;
        let mut tolerance = 1.0;
        let mut pressure_factor = PRESSURE_FACTOR;
        let mut estimator = Estimator::Mean;
        let mut guard_band = 0.0;
        let mut ic_sensitivity = DEFAULT_IC_SENSITIVITY;
        // Antenna overrides are applied after the base model is known.
        let mut antenna_keys: Vec<(Option<Finger>, String, f64)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let no = idx + 1;
            let trimmed = raw.split('#').next().unwrap_or("").trim();
            if trimmed.is_empty() {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: no,
                msg: format!("expected `key = value`, got `{trimmed}`"),
            })?;
            let line = Line {
                no,
                key: key.trim(),
                value: value.trim(),
            };
            match line.key {
                "freq" => frequency = line.quantity(Quantity::Frequency)?,
                "c_min" => ic.c_min = line.quantity(Quantity::Capacitance)?,
                "c_step" => ic.c_step = line.quantity(Quantity::Capacitance)?,
                "s_min" => ic.s_min = line.integer()?,
                "s_max" => ic.s_max = line.integer()?,
                "g_ic" => ic.g_ic = line.quantity(Quantity::Conductance)?,
                "z_c" => {
                    let tok = line.value.strip_suffix("ohm").unwrap_or(line.value).trim();
                    let z: Complex64 = parse_complex(tok).map_err(|msg| ConfigError::Syntax { line: no, msg })?;
                    load = PortLoad::new(z).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                }
                "sawtooth_freq" => fluct.sawtooth_frequency = line.quantity(Quantity::Frequency)?,
                "sample_period" => fluct.sample_period = line.quantity(Quantity::Time)?,
                "transient_tau" => fluct.transient_duration = line.quantity(Quantity::Time)?,
                "window" => window = line.integer()?,
                "m_inf" => m_inf = line.integer()?,
                "convergence_tolerance" => tolerance = line.quantity(Quantity::Plain)?,
                "pressure_factor" => pressure_factor = line.quantity(Quantity::Plain)?,
                "guard_band" => guard_band = line.quantity(Quantity::Plain)?,
                "ic_sensitivity" => ic_sensitivity = line.quantity(Quantity::Power)?,
                "estimator" => {
                    estimator = line.value.parse().map_err(|_| ConfigError::Unit {
                        line: no,
                        key: line.key.to_string(),
                        expected: "`mean` or `median`",
                        got: line.value.to_string(),
                    })?
                }
                k if k.starts_with("antenna.") => {
                    let mut it = k.splitn(3, '.').skip(1);
                    let (who, field) = (it.next().unwrap_or(""), it.next().unwrap_or(""));
                    let finger = match who {
                        "*" => None,
                        f => Some(f.parse::<Finger>().map_err(|e| ConfigError::Syntax {
                            line: no,
                            msg: e.to_string(),
                        })?),
                    };
                    let q = match field {
                        "g_a" | "b_ref" | "swing" => Quantity::Conductance,
                        "eps_half" => Quantity::Plain,
                        _ => {
                            return Err(ConfigError::UnknownKey {
                                line: no,
                                key: k.to_string(),
                            })
                        }
                    };
                    antenna_keys.push((finger, field.to_string(), line.quantity(q)?));
                }
                other => {
                    return Err(ConfigError::UnknownKey {
                        line: no,
                        key: other.to_string(),
                    })
                }
            }
        }

        ic.validate()?;
        let base = AntennaModel::calibrate(
            &ic,
            frequency,
            crate::ic::DEFAULT_ANTENNA_CONDUCTANCE,
            crate::ic::DEFAULT_AIR_CODE,
            crate::ic::DEFAULT_ANCHOR_LOW,
            crate::ic::DEFAULT_ANCHOR_HIGH,
        )?;
        let mut antennas = [base; CHANNELS];
        // Wildcards first, so per-finger keys win regardless of file order.
        antenna_keys.sort_by_key(|(f, _, _)| f.is_some());
        for (finger, field, v) in antenna_keys {
            for (i, a) in antennas.iter_mut().enumerate() {
                if finger.is_some_and(|f| f.index() != i) {
                    continue;
                }
                match field.as_str() {
                    "g_a" => a.g_a = v,
                    "b_ref" => a.b_ref = v,
                    "swing" => a.swing = v,
                    _ => a.eps_half = v,
                }
            }
        }
        for a in &antennas {
            a.validate()?;
        }
        fluct.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if window < 1 || m_inf < 2 || window > m_inf {
            return Err(ConfigError::Invalid(format!(
                "need 1 <= window <= m_inf, m_inf >= 2 (window={window}, m_inf={m_inf})"
            )));
        }
        if !(tolerance > 0.0 && pressure_factor >= 0.0 && guard_band >= 0.0 && ic_sensitivity > 0.0) {
            return Err(ConfigError::Invalid(
                "tolerance and sensitivity must be positive; pressure factor and guard band non-negative".into(),
            ));
        }
        Ok(SessionConfig {
            frequency,
            ic,
            antennas,
            load,
            fluctuation: fluct,
            window,
            m_inf,
            convergence_tolerance: tolerance,
            pressure_factor,
            estimator,
            guard_band,
            ic_sensitivity,
        })
    }

    /// Acquisition time covered by the averaging window (s).
    pub fn acquisition_time(&self) -> f64 {
        self.window as f64 * self.fluctuation.sample_period
    }
}
