//! Simulation and analysis of multi-channel auto-tuning RFID dielectric
//! sensing: IC and antenna models, sensor-code streams, fingerprints,
//! inter-sensor coupling, and permittivity-class classification.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod channel;
pub mod classify;
pub mod config;
pub mod coupling;
pub mod export;
pub mod fingerprint;
pub mod ic;
pub mod log;
pub mod materials;
pub mod population;
pub mod signal;

pub use channel::{Finger, CHANNELS};
pub use classify::{ClassSet, Classification, MaterialClass, PermittivityClass, ReliabilityReport, TrialRecord};
pub use config::SessionConfig;
pub use coupling::{CouplingReport, ImpedanceMatrix, PortLoad};
pub use fingerprint::{CalibrationBaseline, ChannelReading, Fingerprint};
pub use ic::{AntennaModel, AntennaState, AutoTuneIC, Saturation, SensorCode};
pub use log::{ReadLogRow, SeriesSet};
pub use signal::{CodeSeries, Estimator, FluctuationModel, Sample};
