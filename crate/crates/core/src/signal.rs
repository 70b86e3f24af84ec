//! Sensor-code time series: synthesis of the touch transient and the
//! sawtooth fluctuation, spectrum analysis, and the convergence-error
//! procedure that sizes the acquisition window.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::channel::Finger;

/// Largest value the sensor-code register can hold.
pub const CODE_STORAGE_MAX: u16 = 511;
/// Asymptotic window length of the convergence analysis.
pub const DEFAULT_M_INF: usize = 100;
/// Acquisition window, in samples.
pub const DEFAULT_WINDOW: usize = 10;
/// Reader sampling period (s).
pub const DEFAULT_SAMPLE_PERIOD: f64 = 0.7;
/// Frequency of the charge/discharge sawtooth (Hz).
pub const DEFAULT_SAWTOOTH_FREQUENCY: f64 = 0.7;
/// Minimum number of samples accepted by the spectrum estimator.
pub const MIN_SPECTRUM_SAMPLES: usize = 16;

/// Consistency factor turning a median absolute deviation into a σ estimate.
const MAD_SCALE: f64 = 1.482_602_218_505_602;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SignalError {
    #[error("need at least {needed} samples, have {available}")]
    InsufficientSamples { needed: usize, available: usize },
    #[error("sampling is not uniform (max timestamp jitter {max_jitter:.3e} s)")]
    NonUniform { max_jitter: f64 },
    #[error("no dominant component: all non-DC spectrum bins are zero")]
    NoDominantComponent,
    #[error("not converged: |delta| at full length is {delta}")]
    NotConverged { delta: f64 },
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("invalid fluctuation model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub code: u16,
}

/// Time-ordered sensor codes of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSeries {
    channel: Finger,
    samples: Vec<Sample>,
}

impl CodeSeries {
    pub fn new(channel: Finger, samples: Vec<Sample>) -> Result<Self, SignalError> {
        for (i, s) in samples.iter().enumerate() {
            if !s.t.is_finite() {
                return Err(SignalError::InvalidSeries(format!("sample {i}: non-finite timestamp")));
            }
            if s.code > CODE_STORAGE_MAX {
                return Err(SignalError::InvalidSeries(format!(
                    "sample {i}: code {} exceeds {CODE_STORAGE_MAX}",
                    s.code
                )));
            }
        }
        if let Some(i) = samples.windows(2).position(|w| w[1].t <= w[0].t) {
            return Err(SignalError::InvalidSeries(format!(
                "timestamps not strictly increasing at sample {}",
                i + 1
            )));
        }
        Ok(CodeSeries { channel, samples })
    }

    /// Evenly spaced series starting at t = 0.
    pub fn from_codes(channel: Finger, period: f64, codes: &[u16]) -> Result<Self, SignalError> {
        let samples = codes
            .iter()
            .enumerate()
            .map(|(i, &code)| Sample {
                t: i as f64 * period,
                code,
            })
            .collect();
        CodeSeries::new(channel, samples)
    }

    pub fn channel(&self) -> Finger {
        self.channel
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn codes(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| f64::from(s.code))
    }

    fn head(&self, m: usize) -> Vec<f64> {
        self.codes().take(m).collect()
    }
}

/// Phenomenological model of the code stream after a touch: settling
/// transient, sawtooth from the chip's capacitor charge/discharge, and
/// Gaussian read noise, all rounded to integer codes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationModel {
    pub baseline: u16,
    /// Peak deviation of the sawtooth (codes).
    pub sawtooth_amplitude: f64,
    pub sawtooth_frequency: f64,
    /// Phase of the sawtooth at t = 0, in cycles.
    pub sawtooth_phase: f64,
    /// Time constant of the exponential settling transient (s).
    pub transient_duration: f64,
    /// Initial excess of the transient over the baseline (codes).
    pub transient_amplitude: f64,
    pub noise_sd: f64,
    pub sample_period: f64,
}

impl Default for FluctuationModel {
    fn default() -> Self {
        FluctuationModel {
            baseline: 200,
            sawtooth_amplitude: 2.0,
            sawtooth_frequency: DEFAULT_SAWTOOTH_FREQUENCY,
            sawtooth_phase: 0.0,
            transient_duration: 1.5,
            transient_amplitude: 6.0,
            noise_sd: 0.5,
            sample_period: DEFAULT_SAMPLE_PERIOD,
        }
    }
}

impl FluctuationModel {
    /// Constant stream: no transient, no sawtooth, no noise.
    pub fn steady(baseline: u16) -> Self {
        FluctuationModel {
            baseline,
            sawtooth_amplitude: 0.0,
            transient_amplitude: 0.0,
            noise_sd: 0.0,
            ..FluctuationModel::default()
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        let bad = |m: &str| Err(SignalError::InvalidModel(m.to_string()));
        if !(self.sawtooth_frequency > 0.0) {
            return bad("sawtooth_frequency must be positive");
        }
        if !(self.sample_period > 0.0) {
            return bad("sample_period must be positive");
        }
        if !(self.sawtooth_amplitude >= 0.0 && self.transient_amplitude >= 0.0 && self.noise_sd >= 0.0) {
            return bad("amplitudes must be non-negative");
        }
        if !(self.transient_duration > 0.0) {
            return bad("transient_duration must be positive");
        }
        if self.baseline > CODE_STORAGE_MAX {
            return bad("baseline exceeds code storage range");
        }
        Ok(())
    }

    /// Noise-free value at time `t`.
    pub fn deterministic_at(&self, t: f64) -> f64 {
        let phase = self.sawtooth_frequency * t + self.sawtooth_phase;
        let saw = self.sawtooth_amplitude * (2.0 * (phase - phase.floor()) - 1.0);
        let transient = self.transient_amplitude * (-t / self.transient_duration).exp();
        f64::from(self.baseline) + transient + saw
    }

    /// Samples `duration` seconds of the stream on the reader clock.
    /// Identical seeds give identical series.
    pub fn synthesize(&self, channel: Finger, duration: f64, seed: u64) -> Result<CodeSeries, SignalError> {
        self.validate()?;
        if !(duration >= self.sample_period) {
            return Err(SignalError::InvalidArgument(format!(
                "duration {duration} s shorter than one sample period"
            )));
        }
        let n = (duration / self.sample_period + 1e-9).floor() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.noise_sd).map_err(|e| SignalError::InvalidModel(e.to_string()))?;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 * self.sample_period;
                let mut v = self.deterministic_at(t);
                if self.noise_sd > 0.0 {
                    v += noise.sample(&mut rng);
                }
                let code = v.round_ties_even().clamp(0.0, f64::from(CODE_STORAGE_MAX)) as u16;
                Sample { t, code }
            })
            .collect();
        CodeSeries::new(channel, samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBin {
    pub freq_hz: f64,
    pub amplitude: f64,
}

fn uniform_period(series: &CodeSeries) -> Result<f64, SignalError> {
    let s = series.samples();
    let n = s.len();
    let period = (s[n - 1].t - s[0].t) / (n - 1) as f64;
    let max_jitter = s.windows(2).map(|w| ((w[1].t - w[0].t) - period).abs()).fold(0.0, f64::max);
    if max_jitter > 1e-6 * period {
        return Err(SignalError::NonUniform { max_jitter });
    }
    Ok(period)
}

/// Single-sided amplitude spectrum of the mean-removed series
/// (rectangular window). Bin spacing is `1 / (N · period)`.
pub fn amplitude_spectrum(series: &CodeSeries) -> Result<Vec<SpectrumBin>, SignalError> {
    let n = series.len();
    if n < MIN_SPECTRUM_SAMPLES {
        return Err(SignalError::InsufficientSamples {
            needed: MIN_SPECTRUM_SAMPLES,
            available: n,
        });
    }
    let period = uniform_period(series)?;
    let mean = series.codes().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = series.codes().map(|c| Complex::new(c - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = 1.0 / (n as f64 * period);
    Ok((0..=n / 2)
        .map(|k| {
            let edge = k == 0 || (n.is_multiple_of(2) && k == n / 2);
            let scale = if edge { 1.0 } else { 2.0 };
            SpectrumBin {
                freq_hz: k as f64 * df,
                amplitude: scale * buf[k].norm() / n as f64,
            }
        })
        .collect())
}

/// Frequency of the strongest non-DC spectrum bin.
pub fn dominant_frequency(series: &CodeSeries) -> Result<f64, SignalError> {
    let spectrum = amplitude_spectrum(series)?;
    let peak = spectrum[1..]
        .iter()
        .fold(None::<&SpectrumBin>, |best, b| match best {
            Some(x) if x.amplitude >= b.amplitude => Some(x),
            _ => Some(b),
        })
        .ok_or(SignalError::NoDominantComponent)?;
    if peak.amplitude <= 1e-9 {
        return Err(SignalError::NoDominantComponent);
    }
    Ok(peak.freq_hz)
}

/// Location estimator applied to the acquisition window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Mean,
    Median,
}

impl std::str::FromStr for Estimator {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "mean" => Ok(Estimator::Mean),
            "median" => Ok(Estimator::Median),
            other => Err(SignalError::InvalidArgument(format!("unknown estimator `{other}`"))),
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Mean => "mean",
            Estimator::Median => "median",
        })
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Median absolute deviation scaled to estimate σ under Gaussian noise.
pub fn robust_spread(xs: &[f64]) -> f64 {
    let med = median(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - med).abs()).collect();
    MAD_SCALE * median(&dev)
}

impl Estimator {
    pub fn locate(self, xs: &[f64]) -> f64 {
        match self {
            Estimator::Mean => mean(xs),
            Estimator::Median => median(xs),
        }
    }

    /// Spread statistic paired with the estimator: σ for the mean, scaled
    /// MAD for the median.
    pub fn spread(self, xs: &[f64]) -> f64 {
        match self {
            Estimator::Mean => std_dev(xs),
            Estimator::Median => robust_spread(xs),
        }
    }
}

fn check_window(series: &CodeSeries, m: usize, m_inf: usize) -> Result<(), SignalError> {
    if m < 2 || m > m_inf {
        return Err(SignalError::InvalidArgument(format!(
            "need 2 <= m <= m_inf, got m={m}, m_inf={m_inf}"
        )));
    }
    if series.len() < m_inf {
        return Err(SignalError::InsufficientSamples {
            needed: m_inf,
            available: series.len(),
        });
    }
    Ok(())
}

/// `σ[m] − σ[m_inf]` over the leading samples (population σ).
pub fn convergence_error(series: &CodeSeries, m: usize, m_inf: usize) -> Result<f64, SignalError> {
    convergence_error_with(series, m, m_inf, Estimator::Mean)
}

/// Convergence error using the spread statistic paired with `estimator`.
pub fn convergence_error_with(series: &CodeSeries, m: usize, m_inf: usize, estimator: Estimator) -> Result<f64, SignalError> {
    check_window(series, m, m_inf)?;
    let all = series.head(m_inf);
    Ok(estimator.spread(&all[..m]) - estimator.spread(&all))
}

/// Convergence curve `δ[M]` for `M = 2..=m_inf`.
pub fn convergence_curve(series: &CodeSeries, m_inf: usize, estimator: Estimator) -> Result<Vec<(usize, f64)>, SignalError> {
    check_window(series, 2, m_inf)?;
    let all = series.head(m_inf);
    let asymptote = estimator.spread(&all);
    Ok((2..=m_inf).map(|m| (m, estimator.spread(&all[..m]) - asymptote)).collect())
}

/// Smallest window `M` from which `|δ|` stays below `tolerance` up to `m_inf`.
pub fn minimum_samples(series: &CodeSeries, tolerance: f64, m_inf: usize, estimator: Estimator) -> Result<usize, SignalError> {
    let curve = convergence_curve(series, m_inf, estimator)?;
    let mut answer = None;
    for &(m, d) in curve.iter().rev() {
        if d.abs() < tolerance {
            answer = Some(m);
        } else {
            break;
        }
    }
    answer.ok_or_else(|| SignalError::NotConverged {
        delta: curve.last().map_or(0.0, |c| c.1).abs(),
    })
}

/// Location estimate over the first `window` samples.
pub fn estimate_code(series: &CodeSeries, window: usize, estimator: Estimator) -> Result<f64, SignalError> {
    if window == 0 {
        return Err(SignalError::InvalidArgument("empty window".into()));
    }
    if window > series.len() {
        return Err(SignalError::InsufficientSamples {
            needed: window,
            available: series.len(),
        });
    }
    Ok(estimator.locate(&series.head(window)))
}
