//! Turning acquired series into calibration baselines and channel readings.

use crate::channel::{Finger, CHANNELS};
use crate::fingerprint::{CalibrationBaseline, ChannelReading};
use crate::log::SeriesSet;
use crate::signal::{estimate_code, Estimator, SignalError};

/// Air-touch baseline: windowed mean per channel present in `air`. Channels
/// without data are listed in `gaps` rather than failing the calibration.
pub fn calibrate(air: &SeriesSet, window: usize) -> Result<CalibrationBaseline, SignalError> {
    let mut baseline = CalibrationBaseline {
        codes: Default::default(),
        timestamp: 0.0,
        gaps: Vec::new(),
    };
    for f in Finger::ALL {
        match air.get(&f).filter(|s| !s.is_empty()) {
            Some(series) => {
                baseline.codes.insert(f, estimate_code(series, window, Estimator::Mean)?);
                let last = series.samples()[window - 1].t;
                baseline.timestamp = baseline.timestamp.max(last);
            }
            None => baseline.gaps.push(f),
        }
    }
    Ok(baseline)
}

/// One reading per channel; channels absent from `set` are unresponsive.
pub fn readings(set: &SeriesSet, window: usize, estimator: Estimator) -> Result<[ChannelReading; CHANNELS], SignalError> {
    let mut out = Finger::ALL.map(ChannelReading::missing);
    for (f, series) in set {
        if series.is_empty() {
            continue;
        }
        out[f.index()] = ChannelReading::read(*f, estimate_code(series, window, estimator)?);
    }
    Ok(out)
}
