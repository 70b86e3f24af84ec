//! Differential sensor codes, per-hand digital fingerprints with imputation
//! of unread channels, the averaged fingerprint, and its uncertainty under
//! uncontrolled touch pressure.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::{Finger, CHANNELS};
use crate::ic::AutoTuneIC;

/// Relative precision bound of a single-channel Δs under uncontrolled touch pressure.
pub const PRESSURE_FACTOR: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FingerprintError {
    #[error("channel {0} returned no reading")]
    NoReading(Finger),
    #[error("no calibration baseline for channel {0}")]
    NoBaseline(Finger),
    #[error("hand unread: no channel responded")]
    HandUnread,
    #[error("expected one reading per channel, {0}")]
    Readings(String),
    #[error("baseline for channel {channel} is {code}, outside [{min}, {max}]")]
    BaselineRange { channel: Finger, code: f64, min: u16, max: u16 },
}

/// Windowed code estimate of one channel; `None` when the tag did not answer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelReading {
    pub channel: Finger,
    pub code: Option<f64>,
}

impl ChannelReading {
    pub fn read(channel: Finger, code: f64) -> Self {
        ChannelReading { channel, code: Some(code) }
    }

    pub fn missing(channel: Finger) -> Self {
        ChannelReading { channel, code: None }
    }

    pub fn responsive(&self) -> bool {
        self.code.is_some()
    }
}

/// Air-touch codes `s(1)` per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBaseline {
    pub codes: BTreeMap<Finger, f64>,
    /// Timestamp (s) of the last sample used for the calibration.
    pub timestamp: f64,
    /// Channels that had no usable air data.
    #[serde(default)]
    pub gaps: Vec<Finger>,
}

impl CalibrationBaseline {
    pub fn uniform(code: f64) -> Self {
        CalibrationBaseline {
            codes: Finger::ALL.iter().map(|&f| (f, code)).collect(),
            timestamp: 0.0,
            gaps: Vec::new(),
        }
    }

    pub fn get(&self, channel: Finger) -> Option<f64> {
        self.codes.get(&channel).copied()
    }

    pub fn validate(&self, ic: &AutoTuneIC) -> Result<(), FingerprintError> {
        for (&channel, &code) in &self.codes {
            if !(code >= f64::from(ic.s_min) && code <= f64::from(ic.s_max)) {
                return Err(FingerprintError::BaselineRange {
                    channel,
                    code,
                    min: ic.s_min,
                    max: ic.s_max,
                });
            }
        }
        Ok(())
    }
}

/// `s(1) − s(ε)` for one channel.
pub fn differential_code(baseline: &CalibrationBaseline, reading: &ChannelReading) -> Result<f64, FingerprintError> {
    let code = reading.code.ok_or(FingerprintError::NoReading(reading.channel))?;
    let air = baseline.get(reading.channel).ok_or(FingerprintError::NoBaseline(reading.channel))?;
    Ok(air - code)
}

/// Five-channel vector of differential codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub values: [f64; CHANNELS],
    pub imputed: [bool; CHANNELS],
    pub material: Option<String>,
    pub n_responsive: usize,
}

impl Fingerprint {
    /// Builds a fingerprint from one reading per channel (any order). Unread
    /// channels take the mean of the responsive ones.
    pub fn build(readings: &[ChannelReading], baseline: &CalibrationBaseline) -> Result<Self, FingerprintError> {
        let mut slots: [Option<&ChannelReading>; CHANNELS] = [None; CHANNELS];
        for r in readings {
            let slot = &mut slots[r.channel.index()];
            if slot.is_some() {
                return Err(FingerprintError::Readings(format!("channel {} given twice", r.channel)));
            }
            *slot = Some(r);
        }
        if let Some(i) = slots.iter().position(Option::is_none) {
            return Err(FingerprintError::Readings(format!("channel {} missing", Finger::ALL[i])));
        }

        let mut values = [0.0; CHANNELS];
        let mut imputed = [false; CHANNELS];
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, r) in slots.iter().flatten().enumerate() {
            if r.responsive() {
                values[i] = differential_code(baseline, r)?;
                sum += values[i];
                n += 1;
            } else {
                imputed[i] = true;
            }
        }
        if n == 0 {
            return Err(FingerprintError::HandUnread);
        }
        let fill = sum / n as f64;
        for i in 0..CHANNELS {
            if imputed[i] {
                values[i] = fill;
            }
        }
        Ok(Fingerprint {
            values,
            imputed,
            material: None,
            n_responsive: n,
        })
    }

    pub fn with_material(mut self, material: impl Into<String>) -> Self {
        self.material = Some(material.into());
        self
    }

    pub fn responsive_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(self.imputed.iter())
            .filter(|(_, &imp)| !imp)
            .map(|(&v, _)| v)
    }

    /// Averaged fingerprint: mean over all five post-imputation values.
    pub fn average(&self) -> f64 {
        self.values.iter().sum::<f64>() / CHANNELS as f64
    }

    /// Pressure uncertainty of the averaged fingerprint, propagated over the
    /// responsive channels only.
    pub fn propagated_uncertainty(&self) -> f64 {
        self.propagated_uncertainty_with(PRESSURE_FACTOR)
    }

    /// As [`Fingerprint::propagated_uncertainty`] with a custom relative precision factor.
    pub fn propagated_uncertainty_with(&self, factor: f64) -> f64 {
        let sum_sq: f64 = self.responsive_values().map(|v| (factor * v).powi(2)).sum();
        sum_sq.sqrt() / self.n_responsive as f64
    }

    pub fn to_record(&self) -> FingerprintRecord {
        FingerprintRecord {
            material: self.material.clone(),
            values: Finger::ALL.iter().map(|&f| (f, self.values[f.index()])).collect(),
            imputed: Finger::ALL.iter().map(|&f| (f, self.imputed[f.index()])).collect(),
            n_responsive: self.n_responsive,
            f_bar: self.average(),
            sigma_f: self.propagated_uncertainty(),
        }
    }
}

/// Single-channel pressure uncertainty, `0.3·|Δs|`.
pub fn pressure_uncertainty(delta_s: f64) -> f64 {
    PRESSURE_FACTOR * delta_s.abs()
}

/// JSON export shape of a fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintRecord {
    pub material: Option<String>,
    pub values: BTreeMap<Finger, f64>,
    pub imputed: BTreeMap<Finger, bool>,
    pub n_responsive: usize,
    pub f_bar: f64,
    pub sigma_f: f64,
}

impl FingerprintRecord {
    pub fn to_fingerprint(&self) -> Result<Fingerprint, FingerprintError> {
        let mut values = [0.0; CHANNELS];
        let mut imputed = [false; CHANNELS];
        for f in Finger::ALL {
            values[f.index()] = *self
                .values
                .get(&f)
                .ok_or_else(|| FingerprintError::Readings(format!("channel {f} missing")))?;
            imputed[f.index()] = self.imputed.get(&f).copied().unwrap_or(false);
        }
        Ok(Fingerprint {
            values,
            imputed,
            material: self.material.clone(),
            n_responsive: self.n_responsive,
        })
    }
}
