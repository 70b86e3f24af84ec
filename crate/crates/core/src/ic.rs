//! Auto-tuning IC model: capacitance ladder, self-tuning balance, sensor-code
//! inversion with saturation, and the piecewise power-transfer coefficient.
//!
//! Everything here works in SI units (farads, siemens, hertz).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// EU UHF RFID carrier used throughout the toolkit.
pub const EU_FREQUENCY_HZ: f64 = 867.0e6;

/// Lower edge of the permittivity range the antenna forward model accepts.
pub const EPSILON_MIN: f64 = 1.0;
/// Upper edge of the permittivity range the antenna forward model accepts.
pub const EPSILON_MAX: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IcError {
    #[error("{what} = {value} outside valid interval [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Parameter set of an auto-tuning RFID IC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoTuneIC {
    /// Ladder capacitance at code zero (F).
    pub c_min: f64,
    /// Capacitance added per code step (F).
    pub c_step: f64,
    pub s_min: u16,
    pub s_max: u16,
    /// Input conductance of the chip (S).
    pub g_ic: f64,
}

impl Default for AutoTuneIC {
    fn default() -> Self {
        AutoTuneIC {
            c_min: 1.9e-12,
            c_step: 3.1e-15,
            s_min: 80,
            s_max: 400,
            g_ic: 0.482e-3,
        }
    }
}

/// Which end of the linear code range, if any, clipped the tuning result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Saturation {
    None,
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorCode {
    pub code: u16,
    pub saturated: Saturation,
}

/// Electrical state of an antenna as seen from the IC terminals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntennaState {
    pub g_a: f64,
    /// Susceptance (S); negative values are inductive.
    pub b_a: f64,
    pub frequency: f64,
}

impl AutoTuneIC {
    pub fn new(c_min: f64, c_step: f64, s_min: u16, s_max: u16, g_ic: f64) -> Result<Self, IcError> {
        let ic = AutoTuneIC {
            c_min,
            c_step,
            s_min,
            s_max,
            g_ic,
        };
        ic.validate()?;
        Ok(ic)
    }

    pub fn validate(&self) -> Result<(), IcError> {
        if !(self.c_min > 0.0) {
            return Err(IcError::InvalidParameter(format!("c_min must be positive, got {}", self.c_min)));
        }
        // A zero step is tolerated so that flat ladders can be modelled.
        if !(self.c_step >= 0.0) {
            return Err(IcError::InvalidParameter(format!(
                "c_step must be non-negative, got {}",
                self.c_step
            )));
        }
        if self.s_min >= self.s_max {
            return Err(IcError::InvalidParameter(format!(
                "code range [{}, {}] is empty",
                self.s_min, self.s_max
            )));
        }
        if !(self.g_ic > 0.0) {
            return Err(IcError::InvalidParameter(format!("g_ic must be positive, got {}", self.g_ic)));
        }
        Ok(())
    }

    fn check_code(&self, s: u16) -> Result<(), IcError> {
        if s < self.s_min || s > self.s_max {
            return Err(IcError::OutOfRange {
                what: "sensor code",
                value: f64::from(s),
                min: f64::from(self.s_min),
                max: f64::from(self.s_max),
            });
        }
        Ok(())
    }

    /// Ladder capacitance at code `s`.
    pub fn capacitance(&self, s: u16) -> Result<f64, IcError> {
        self.check_code(s)?;
        Ok(self.c_min + f64::from(s) * self.c_step)
    }

    /// Chip susceptance `2πf·C(s)`.
    pub fn susceptance(&self, s: u16, frequency: f64) -> Result<f64, IcError> {
        if !(frequency > 0.0) {
            return Err(IcError::InvalidParameter(format!("frequency must be positive, got {frequency}")));
        }
        Ok(2.0 * PI * frequency * self.capacitance(s)?)
    }

    /// Unrounded, unclamped code that exactly cancels `b_a`.
    pub fn balance_point(&self, antenna: &AntennaState) -> f64 {
        (-antenna.b_a / (2.0 * PI * antenna.frequency) - self.c_min) / self.c_step
    }

    /// Code the chip settles on when connected to `antenna`.
    ///
    /// Rounds the balance point half-to-even and clamps into `[s_min, s_max]`.
    pub fn sensor_code(&self, antenna: &AntennaState) -> SensorCode {
        let exact = self.balance_point(antenna).round_ties_even();
        let (lo, hi) = (f64::from(self.s_min), f64::from(self.s_max));
        if exact < lo || exact.is_nan() {
            SensorCode {
                code: self.s_min,
                saturated: Saturation::Low,
            }
        } else if exact > hi {
            SensorCode {
                code: self.s_max,
                saturated: Saturation::High,
            }
        } else {
            SensorCode {
                code: exact as u16,
                saturated: Saturation::None,
            }
        }
    }

    /// Susceptance interval `[lower, upper]` the ladder can compensate at `frequency`.
    pub fn tunable_window(&self, frequency: f64) -> (f64, f64) {
        let w = 2.0 * PI * frequency;
        (-w * (self.c_min + f64::from(self.s_max) * self.c_step), -w * self.c_min)
    }

    /// Fraction of the harvested power delivered to the chip.
    ///
    /// Inside the tunable window (boundaries included) the reactive part is
    /// cancelled and only the conductance mismatch remains; outside it the
    /// residual susceptance at the clamped ladder end enters the denominator.
    pub fn power_transfer(&self, antenna: &AntennaState) -> f64 {
        let w = 2.0 * PI * antenna.frequency;
        let (lower, upper) = self.tunable_window(antenna.frequency);
        let residual = if antenna.b_a > upper {
            antenna.b_a + w * self.c_min
        } else if antenna.b_a < lower {
            antenna.b_a + w * (self.c_min + f64::from(self.s_max) * self.c_step)
        } else {
            0.0
        };
        let g_sum = self.g_ic + antenna.g_a;
        4.0 * self.g_ic * antenna.g_a / (g_sum * g_sum + residual * residual)
    }
}

/// Permittivity-to-admittance forward model of one fingertip antenna.
///
/// `b_a(ε) = b_ref + swing·(ε − 1)/(ε + eps_half)`: the antenna turns less
/// inductive as the touched material gets more polar, so the chip needs a
/// smaller ladder code and the differential code grows with ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntennaModel {
    /// Susceptance in air, ε = 1 (S).
    pub b_ref: f64,
    /// Asymptotic susceptance change as ε → ∞ (S, non-negative).
    pub swing: f64,
    /// Permittivity offset controlling where the response saturates.
    pub eps_half: f64,
    pub g_a: f64,
    pub frequency: f64,
}

impl AntennaModel {
    pub fn new(b_ref: f64, swing: f64, eps_half: f64, g_a: f64, frequency: f64) -> Result<Self, IcError> {
        let m = AntennaModel {
            b_ref,
            swing,
            eps_half,
            g_a,
            frequency,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), IcError> {
        if !self.b_ref.is_finite() {
            return Err(IcError::InvalidParameter("b_ref must be finite".into()));
        }
        if !(self.swing >= 0.0) {
            return Err(IcError::InvalidParameter(format!("swing must be non-negative, got {}", self.swing)));
        }
        if !(self.eps_half > -EPSILON_MIN) {
            return Err(IcError::InvalidParameter(format!("eps_half must exceed -1, got {}", self.eps_half)));
        }
        if !(self.g_a > 0.0) {
            return Err(IcError::InvalidParameter(format!("g_a must be positive, got {}", self.g_a)));
        }
        if !(self.frequency > 0.0) {
            return Err(IcError::InvalidParameter(format!(
                "frequency must be positive, got {}",
                self.frequency
            )));
        }
        Ok(())
    }

    /// Fits `b_ref`, `swing` and `eps_half` so that the chip reads `s_air`
    /// (fractional codes allowed) in air and the differential code passes
    /// through the two anchor points `(ε, Δs)`.
    pub fn calibrate(
        ic: &AutoTuneIC,
        frequency: f64,
        g_a: f64,
        s_air: f64,
        anchor_a: (f64, f64),
        anchor_b: (f64, f64),
    ) -> Result<Self, IcError> {
        let (ea, da) = anchor_a;
        let (eb, db) = anchor_b;
        for e in [ea, eb] {
            if !(e > EPSILON_MIN && e <= EPSILON_MAX) {
                return Err(IcError::OutOfRange {
                    what: "anchor permittivity",
                    value: e,
                    min: EPSILON_MIN,
                    max: EPSILON_MAX,
                });
            }
        }
        // Δs(ε) = A·(ε−1)/(ε+h) is linear in h once A is eliminated.
        let ra = da / (ea - 1.0);
        let rb = db / (eb - 1.0);
        let denom = ra - rb;
        if denom == 0.0 {
            return Err(IcError::InvalidParameter("anchors do not determine a saturating response".into()));
        }
        let eps_half = (db * eb / (eb - 1.0) - da * ea / (ea - 1.0)) / denom;
        let amplitude_codes = ra * (ea + eps_half);
        let w = 2.0 * PI * frequency;
        let model = AntennaModel {
            b_ref: -w * (ic.c_min + s_air * ic.c_step),
            swing: amplitude_codes * w * ic.c_step,
            eps_half,
            g_a,
            frequency,
        };
        model.validate()?;
        Ok(model)
    }

    /// Antenna admittance when touching a material of permittivity `epsilon`.
    pub fn response(&self, epsilon: f64) -> Result<AntennaState, IcError> {
        if !(EPSILON_MIN..=EPSILON_MAX).contains(&epsilon) {
            return Err(IcError::OutOfRange {
                what: "permittivity",
                value: epsilon,
                min: EPSILON_MIN,
                max: EPSILON_MAX,
            });
        }
        let shape = (epsilon - 1.0) / (epsilon + self.eps_half);
        Ok(AntennaState {
            g_a: self.g_a,
            b_a: self.b_ref + self.swing * shape,
            frequency: self.frequency,
        })
    }
}

/// Default anchors of the fingertip antenna calibration: air code, then
/// (ε, Δs) for olive oil and deionized water. The water–oil span gives one
/// code unit per 0.6 units of dielectric contrast.
pub const DEFAULT_AIR_CODE: f64 = 300.0;
pub const DEFAULT_ANCHOR_LOW: (f64, f64) = (3.0, 16.0);
pub const DEFAULT_ANCHOR_HIGH: (f64, f64) = (78.0, 141.0);
/// Antenna conductance seen by the chip (S).
pub const DEFAULT_ANTENNA_CONDUCTANCE: f64 = 0.35e-3;

impl Default for AntennaModel {
    fn default() -> Self {
        AntennaModel::calibrate(
            &AutoTuneIC::default(),
            EU_FREQUENCY_HZ,
            DEFAULT_ANTENNA_CONDUCTANCE,
            DEFAULT_AIR_CODE,
            DEFAULT_ANCHOR_LOW,
            DEFAULT_ANCHOR_HIGH,
        )
        .expect("default antenna calibration is well-posed")
    }
}

/// Sensor code read through `model` when touching permittivity `epsilon`.
pub fn code_at(ic: &AutoTuneIC, model: &AntennaModel, epsilon: f64) -> Result<SensorCode, IcError> {
    Ok(ic.sensor_code(&model.response(epsilon)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const F: f64 = EU_FREQUENCY_HZ;

    fn state(b_a: f64, g_a: f64) -> AntennaState {
        AntennaState { g_a, b_a, frequency: F }
    }

    #[test]
    fn capacitance_ladder() {
        let ic = AutoTuneIC::default();
        assert_relative_eq!(ic.capacitance(80).unwrap(), 2.148e-12, max_relative = 1e-12);
        assert_relative_eq!(ic.capacitance(400).unwrap(), 3.14e-12, max_relative = 1e-12);
        assert!(matches!(ic.capacitance(0), Err(IcError::OutOfRange { min, max, .. }) if min == 80.0 && max == 400.0));
        assert!(ic.capacitance(401).is_err());

        let flat = AutoTuneIC { c_step: 0.0, ..ic };
        assert_eq!(flat.capacitance(200).unwrap(), 1.9e-12);
    }

    #[test]
    fn susceptance_scales_with_frequency() {
        let ic = AutoTuneIC::default();
        let b = ic.susceptance(80, F).unwrap();
        assert_relative_eq!(b, 2.0 * PI * 867e6 * 2.148e-12, max_relative = 1e-12);
        assert!((b - 1.170e-2).abs() < 5e-6);
        assert_eq!(ic.susceptance(123, 2.0 * F).unwrap(), 2.0 * ic.susceptance(123, F).unwrap());

        let flat = AutoTuneIC { c_step: 0.0, ..ic };
        assert_eq!(flat.susceptance(80, F).unwrap(), flat.susceptance(400, F).unwrap());
        assert!(ic.susceptance(100, 0.0).is_err());
    }

    #[test]
    fn sensor_code_inverts_balance() {
        let ic = AutoTuneIC::default();
        let w = 2.0 * PI * F;
        let s = ic.sensor_code(&state(-w * (ic.c_min + 240.4 * ic.c_step), 1e-3));
        assert_eq!(
            s,
            SensorCode {
                code: 240,
                saturated: Saturation::None
            }
        );

        let s = ic.sensor_code(&state(-w * ic.c_min, 1e-3));
        assert_eq!(
            s,
            SensorCode {
                code: 80,
                saturated: Saturation::Low
            }
        );

        let s = ic.sensor_code(&state(-w * (ic.c_min + 1e6 * ic.c_step), 1e-3));
        assert_eq!(
            s,
            SensorCode {
                code: 400,
                saturated: Saturation::High
            }
        );
    }

    #[test]
    fn sensor_code_ties_round_to_even() {
        let ic = AutoTuneIC::default();
        // Exact binary halves avoid representation noise around the tie.
        let ic = AutoTuneIC {
            c_min: 1.0,
            c_step: 1.0,
            ..ic
        };
        let f = 1.0 / (2.0 * PI);
        let at = |x: f64| {
            ic.sensor_code(&AntennaState {
                g_a: 1.0,
                b_a: -(1.0 + x),
                frequency: f,
            })
            .code
        };
        assert_eq!(at(240.5), 240);
        assert_eq!(at(241.5), 242);
    }

    #[test]
    fn half_step_balance_in_linear_range() {
        let ic = AutoTuneIC::default();
        let w = 2.0 * PI * F;
        for i in 0..500 {
            let x = 80.0 + 320.0 * f64::from(i) / 500.0;
            let st = state(-w * (ic.c_min + x * ic.c_step), 1e-3);
            let s = ic.sensor_code(&st);
            let residual = (ic.susceptance(s.code, F).unwrap() + st.b_a).abs();
            assert!(residual <= PI * F * ic.c_step * (1.0 + 1e-9), "x={x}");
        }
    }

    #[test]
    fn power_transfer_branches() {
        let ic = AutoTuneIC::default();
        let (lower, upper) = ic.tunable_window(F);
        let mid = 0.5 * (lower + upper);
        assert_relative_eq!(ic.power_transfer(&state(mid, ic.g_ic)), 1.0, max_relative = 1e-15);
        assert_relative_eq!(ic.power_transfer(&state(upper, 0.482e-3)), 1.0, max_relative = 1e-15);
        let expected = 4.0 * 0.482 * 0.3 / (0.782f64 * 0.782);
        assert_relative_eq!(ic.power_transfer(&state(mid, 0.3e-3)), expected, max_relative = 1e-12);
        assert!((expected - 0.946).abs() < 5e-4);

        // Continuity across both window edges.
        let eps = 1e-12_f64;
        for edge in [lower, upper] {
            let inside = ic.power_transfer(&state(edge, 0.3e-3));
            let outside = ic.power_transfer(&state(edge + eps.copysign(edge - mid), 0.3e-3));
            assert!((inside - outside).abs() < 1e-9);
        }
        // Far outside the window the mismatch dominates.
        assert!(ic.power_transfer(&state(upper + 0.05, 0.3e-3)) < 0.01);
        assert!(ic.power_transfer(&state(lower - 0.05, 0.3e-3)) < 0.01);
    }

    #[test]
    fn antenna_response_anchors() {
        let m = AntennaModel::default();
        assert_eq!(m.response(1.0).unwrap().b_a, m.b_ref);
        assert!(m.response(0.5).is_err());
        assert!(m.response(100.5).is_err());

        let ic = AutoTuneIC::default();
        let s1 = f64::from(code_at(&ic, &m, 1.0).unwrap().code);
        let ds = |e: f64| s1 - f64::from(code_at(&ic, &m, e).unwrap().code);
        assert_eq!(s1, DEFAULT_AIR_CODE);
        assert!(code_at(&ic, &m, 78.0).unwrap().code < code_at(&ic, &m, 3.0).unwrap().code);
        assert!(ds(78.0) > ds(3.0));
        assert_eq!(ds(3.0), 16.0);
        assert_eq!(ds(78.0), 141.0);
        // One unit of F̄ per 0.6 of contrast across the oil..water span.
        assert_relative_eq!((ds(78.0) - ds(3.0)) / (78.0 - 3.0), 1.0 / 0.6, max_relative = 1e-12);
        // No saturation anywhere in the validity range.
        for e in [1.0, 3.0, 17.0, 78.0, 100.0] {
            assert_eq!(code_at(&ic, &m, e).unwrap().saturated, Saturation::None);
        }

        let flat = AntennaModel { swing: 0.0, ..m };
        assert_eq!(flat.response(3.0).unwrap(), flat.response(78.0).unwrap());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(AutoTuneIC::new(0.0, 3.1e-15, 80, 400, 1e-3).is_err());
        assert!(AutoTuneIC::new(1.9e-12, 3.1e-15, 400, 80, 1e-3).is_err());
        assert!(AutoTuneIC::new(1.9e-12, 3.1e-15, 80, 400, 0.0).is_err());
        assert!(AntennaModel::new(-0.01, -1.0, 10.0, 1e-3, F).is_err());
        assert!(AntennaModel::new(-0.01, 1e-3, -2.0, 1e-3, F).is_err());
    }
}
