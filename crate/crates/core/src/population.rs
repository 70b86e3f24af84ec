//! Synthetic test populations: hands touching reference materials, with
//! per-finger response patterns, air calibrations and sensor-code logs, plus
//! the processing chain that turns them back into fingerprints and classes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, readings};
use crate::channel::{Finger, CHANNELS};
use crate::classify::{ClassSet, Classification, PermittivityClass, TrialRecord};
use crate::config::SessionConfig;
use crate::fingerprint::{Fingerprint, FingerprintError};
use crate::ic::{code_at, IcError};
use crate::log::SeriesSet;
use crate::materials::MaterialDb;
use crate::signal::{Estimator, FluctuationModel, SignalError};

/// Percent of hands with at least `m` responsive fingers used by the default
/// spec. The last two entries are zero: no hand answered on all fingers.
pub const DEFAULT_CCD_TARGET: [f64; CHANNELS] = [100.0, 90.0, 55.0, 0.0, 0.0];
/// Pooled per-finger response rates (percent) used by the default spec.
pub const DEFAULT_FINGER_RATES: [f64; CHANNELS] = [20.0, 50.0, 70.0, 30.0, 50.0];
pub const DEFAULT_SEED: u64 = 2021;
/// Seed of the per-liquid convergence fixtures.
pub const FIXTURE_SEED: u64 = 11;

#[derive(Debug, thiserror::Error)]
pub enum PopulationError {
    #[error("invalid population spec: {0}")]
    Spec(String),
    #[error("response targets for `{material}` cannot be realized: {msg}")]
    Infeasible { material: String, msg: String },
    #[error(transparent)]
    Ic(#[from] IcError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("{context}: {source}")]
    Fingerprint {
        context: String,
        #[source]
        source: FingerprintError,
    },
    #[error("missing data: {0}")]
    Missing(String),
}

/// One touched material and how hands respond to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub name: String,
    pub epsilon: f64,
    pub class: PermittivityClass,
    /// Spread of the averaged fingerprint across hands (codes), reached by
    /// hands answering on a single finger; more fingers average it down.
    pub hand_sd: f64,
    /// Per-finger response rates (percent).
    pub response_rates: [f64; CHANNELS],
    /// Code-stream fluctuation while touching; the baseline is overwritten.
    pub fluctuation: FluctuationModel,
}

/// How responsive-finger patterns are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ResponseModel {
    /// Per material, the number of responsive fingers follows `ccd_target`
    /// exactly (up to rounding) and finger totals follow the rates, rescaled
    /// to the same number of responses.
    Matched { ccd_target: [f64; CHANNELS] },
    /// Fingers answer independently with their rates; hands with no
    /// answer at all are redrawn.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub subjects: u32,
    pub trials: u32,
    pub materials: Vec<MaterialSpec>,
    pub response: ResponseModel,
    /// Share of `hand_sd` carried by a whole-hand offset.
    pub hand_share: f64,
    /// Share of `hand_sd` carried by independent per-finger offsets. With
    /// `hand_share² + finger_share² = 1` a one-finger hand spreads by `hand_sd`.
    pub finger_share: f64,
    /// Spread of the per-finger air code across subjects (fabrication).
    pub fabrication_sd: f64,
    /// Code-stream fluctuation of the untouched sensor.
    pub air: FluctuationModel,
    pub seed: u64,
}

/// Fluctuation profile of the code stream while touching a liquid of the
/// given permittivity. Higher permittivity couples more strongly and settles
/// more slowly.
pub fn liquid_fluctuation(epsilon: f64) -> FluctuationModel {
    let (sawtooth_amplitude, noise_sd, transient_amplitude) = match PermittivityClass::of_permittivity(epsilon) {
        PermittivityClass::Low => (1.0, 0.4, 4.0),
        PermittivityClass::Medium => (1.5, 0.6, 6.0),
        PermittivityClass::High => (2.5, 0.9, 10.0),
    };
    FluctuationModel {
        sawtooth_amplitude,
        noise_sd,
        transient_amplitude,
        ..FluctuationModel::default()
    }
}

/// Bare-sensor stream used for air calibration.
pub fn air_fluctuation() -> FluctuationModel {
    FluctuationModel {
        sawtooth_amplitude: 1.0,
        noise_sd: 0.3,
        transient_amplitude: 0.0,
        ..FluctuationModel::default()
    }
}

/// Oil, alcohol and water with class spreads of 5, 11 and 11 codes.
pub fn reference_liquids() -> Vec<MaterialSpec> {
    let db = MaterialDb::builtin();
    [("olive-oil", 5.0), ("ethyl-alcohol", 11.0), ("deionized-water", 11.0)]
        .into_iter()
        .map(|(name, hand_sd)| {
            let m = db.get(name).expect("built-in liquid");
            MaterialSpec {
                name: name.to_string(),
                epsilon: m.epsilon,
                class: PermittivityClass::of_permittivity(m.epsilon),
                hand_sd,
                response_rates: DEFAULT_FINGER_RATES,
                fluctuation: liquid_fluctuation(m.epsilon),
            }
        })
        .collect()
}

/// One-minute-plus series for the convergence study of a liquid: `m_inf`
/// samples at the configured sample period.
pub fn convergence_fixture(
    config: &SessionConfig,
    material: &MaterialSpec,
    channel: Finger,
) -> Result<crate::signal::CodeSeries, PopulationError> {
    let air = code_at(&config.ic, &config.antennas[channel.index()], 1.0)?.code;
    let touch = code_at(&config.ic, &config.antennas[channel.index()], material.epsilon)?.code;
    debug_assert!(touch <= air);
    let model = FluctuationModel {
        baseline: touch,
        sample_period: config.fluctuation.sample_period,
        sawtooth_frequency: config.fluctuation.sawtooth_frequency,
        ..material.fluctuation
    };
    Ok(model.synthesize(channel, config.m_inf as f64 * model.sample_period, FIXTURE_SEED)?)
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            subjects: 10,
            trials: 3,
            materials: reference_liquids(),
            response: ResponseModel::Matched {
                ccd_target: DEFAULT_CCD_TARGET,
            },
            hand_share: 0.8,
            finger_share: 0.6,
            fabrication_sd: 4.0,
            air: air_fluctuation(),
            seed: DEFAULT_SEED,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<(), PopulationError> {
        let bad = |m: String| Err(PopulationError::Spec(m));
        if self.subjects == 0 || self.trials == 0 {
            return bad("need at least one subject and one trial".into());
        }
        if self.materials.is_empty() {
            return bad("no materials".into());
        }
        for m in &self.materials {
            if m.response_rates.iter().any(|r| !(0.0..=100.0).contains(r)) {
                return bad(format!("{}: response rates must lie in [0, 100]", m.name));
            }
            if m.response_rates.iter().all(|&r| r == 0.0) {
                return bad(format!("{}: no finger can ever respond", m.name));
            }
            if !(m.hand_sd >= 0.0) {
                return bad(format!("{}: hand SD must be non-negative", m.name));
            }
            if !(1.0..=100.0).contains(&m.epsilon) {
                return bad(format!("{}: permittivity {} outside [1, 100]", m.name, m.epsilon));
            }
            m.fluctuation.validate()?;
        }
        if let ResponseModel::Matched { ccd_target } = self.response {
            if ccd_target[0] != 100.0 {
                return bad("CCD(1) must be 100: every hand answers on some finger".into());
            }
            if ccd_target.windows(2).any(|w| w[1] > w[0]) || ccd_target.iter().any(|c| !(0.0..=100.0).contains(c)) {
                return bad("CCD target must be non-increasing percentages".into());
            }
        }
        if !(self.hand_share >= 0.0 && self.finger_share >= 0.0 && self.fabrication_sd >= 0.0) {
            return bad("shares and fabrication SD must be non-negative".into());
        }
        self.air.validate()?;
        Ok(())
    }

    /// Number of channel-measurement slots (hands × fingers).
    pub fn measurement_slots(&self) -> usize {
        self.subjects as usize * self.trials as usize * self.materials.len() * CHANNELS
    }
}

/// Records plus the air and trial code series they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationData {
    pub records: Vec<TrialRecord>,
    /// Air calibration series per subject.
    pub air: BTreeMap<u32, SeriesSet>,
    /// Trial series keyed by the record's `log` path.
    pub trials: BTreeMap<String, SeriesSet>,
}

pub fn trial_log_path(subject: u32, material: &str, trial: u32) -> String {
    format!("trials/s{subject:02}_{material}_t{trial}.csv")
}

pub fn air_log_path(subject: u32) -> String {
    format!("air/s{subject:02}.csv")
}

/// Largest-remainder rounding of `weights` to integers summing to `total`,
/// each at most `cap`. Ties go to the lower index.
fn apportion(weights: &[f64; CHANNELS], total: usize, cap: usize) -> Option<[usize; CHANNELS]> {
    if total > cap * CHANNELS {
        return None;
    }
    let mut out = [0usize; CHANNELS];
    let mut free: Vec<usize> = (0..CHANNELS).filter(|&i| weights[i] > 0.0).collect();
    let mut remaining = total;
    // Columns that would exceed the cap are pinned and the rest re-scaled.
    loop {
        let w: f64 = free.iter().map(|&i| weights[i]).sum();
        if free.is_empty() || w <= 0.0 {
            return (remaining == 0).then_some(out);
        }
        let share: Vec<f64> = free.iter().map(|&i| remaining as f64 * weights[i] / w).collect();
        if let Some(k) = share.iter().position(|&s| s > cap as f64) {
            let i = free.remove(k);
            out[i] = cap;
            remaining -= cap;
            continue;
        }
        let mut floors: Vec<(usize, usize, f64)> = free
            .iter()
            .zip(&share)
            .map(|(&i, &s)| (i, s.floor() as usize, s - s.floor()))
            .collect();
        let mut left = remaining - floors.iter().map(|f| f.1).sum::<usize>();
        let mut order: Vec<usize> = (0..floors.len()).collect();
        order.sort_by(|&a, &b| floors[b].2.total_cmp(&floors[a].2).then(floors[a].0.cmp(&floors[b].0)));
        for k in order {
            if left == 0 {
                break;
            }
            if floors[k].1 < cap {
                floors[k].1 += 1;
                left -= 1;
            }
        }
        if left > 0 {
            return None;
        }
        for (i, n, _) in floors {
            out[i] = n;
        }
        return Some(out);
    }
}

/// Zero-one matrix with the given row and column sums (Ryser's greedy
/// construction: each row takes the columns with the largest remaining
/// demand). Fails exactly when no such matrix exists.
fn realize_margins(rows: &[usize], cols: [usize; CHANNELS]) -> Result<Vec<[bool; CHANNELS]>, String> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[b].cmp(&rows[a]).then(a.cmp(&b)));
    let mut demand = cols;
    let mut out = vec![[false; CHANNELS]; rows.len()];
    for r in order {
        let mut fingers: Vec<usize> = (0..CHANNELS).collect();
        fingers.sort_by(|&a, &b| demand[b].cmp(&demand[a]).then(a.cmp(&b)));
        for &f in fingers.iter().take(rows[r]) {
            if demand[f] == 0 {
                return Err(format!("row of {} responses exceeds the remaining finger totals", rows[r]));
            }
            demand[f] -= 1;
            out[r][f] = true;
        }
    }
    if demand.iter().any(|&d| d != 0) {
        return Err(format!("finger totals {cols:?} left unassigned {demand:?}"));
    }
    Ok(out)
}

/// Responsive patterns of the `n` hands touching one material.
fn response_patterns(
    spec: &PopulationSpec,
    material: &MaterialSpec,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[bool; CHANNELS]>, PopulationError> {
    match spec.response {
        ResponseModel::Independent => Ok((0..n).map(|_| independent_pattern(&material.response_rates, rng)).collect()),
        ResponseModel::Matched { ccd_target } => {
            let infeasible = |msg: String| PopulationError::Infeasible {
                material: material.name.clone(),
                msg,
            };
            let at_least: Vec<usize> = ccd_target.iter().map(|c| (n as f64 * c / 100.0).round() as usize).collect();
            let mut rows = Vec::with_capacity(n);
            for m in (1..=CHANNELS).rev() {
                let exactly = at_least[m - 1] - at_least.get(m).copied().unwrap_or(0);
                rows.extend(std::iter::repeat_n(m, exactly));
            }
            let total: usize = rows.iter().sum();
            let cols = apportion(&material.response_rates, total, n)
                .ok_or_else(|| infeasible(format!("{total} responses do not fit the rates")))?;
            let mut patterns = realize_margins(&rows, cols).map_err(infeasible)?;
            patterns.shuffle(rng);
            Ok(patterns)
        }
    }
}

fn independent_pattern(rates: &[f64; CHANNELS], rng: &mut ChaCha8Rng) -> [bool; CHANNELS] {
    loop {
        let p = rates.map(|r| rng.random_bool(r / 100.0));
        if p.iter().any(|&x| x) {
            return p;
        }
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("non-negative finite SD")
}

/// Hand-independent parts of the synthesis: air and touch codes per finger.
struct Chain<'a> {
    config: &'a SessionConfig,
    air_codes: [f64; CHANNELS],
    delta: Vec<[f64; CHANNELS]>,
}

impl<'a> Chain<'a> {
    fn new(config: &'a SessionConfig, materials: &[MaterialSpec]) -> Result<Self, PopulationError> {
        let mut air_codes = [0.0; CHANNELS];
        for f in Finger::ALL {
            air_codes[f.index()] = f64::from(code_at(&config.ic, &config.antennas[f.index()], 1.0)?.code);
        }
        let delta = materials
            .iter()
            .map(|m| {
                let mut d = [0.0; CHANNELS];
                for f in Finger::ALL {
                    d[f.index()] = air_codes[f.index()] - f64::from(code_at(&config.ic, &config.antennas[f.index()], m.epsilon)?.code);
                }
                Ok(d)
            })
            .collect::<Result<_, IcError>>()?;
        Ok(Chain { config, air_codes, delta })
    }

    fn window_duration(&self) -> f64 {
        self.config.window as f64 * self.config.fluctuation.sample_period
    }

    fn clamp_code(&self, c: f64) -> u16 {
        c.round_ties_even()
            .clamp(f64::from(self.config.ic.s_min), f64::from(self.config.ic.s_max)) as u16
    }

    fn stream(&self, model: &FluctuationModel, baseline: f64) -> FluctuationModel {
        FluctuationModel {
            baseline: self.clamp_code(baseline),
            sample_period: self.config.fluctuation.sample_period,
            sawtooth_frequency: self.config.fluctuation.sawtooth_frequency,
            ..*model
        }
    }

    /// Per-subject air codes including fabrication spread.
    fn subject_air(&self, spec: &PopulationSpec, rng: &mut ChaCha8Rng) -> [f64; CHANNELS] {
        let fab = normal(spec.fabrication_sd);
        let mut out = self.air_codes;
        for v in &mut out {
            *v += fab.sample(rng);
        }
        out
    }

    fn air_series(&self, spec: &PopulationSpec, air: &[f64; CHANNELS], rng: &mut ChaCha8Rng) -> Result<SeriesSet, PopulationError> {
        let mut set = SeriesSet::new();
        for f in Finger::ALL {
            let model = self.stream(&spec.air, air[f.index()]);
            set.insert(f, model.synthesize(f, self.window_duration(), rng.random())?);
        }
        Ok(set)
    }

    /// Code streams of one hand touching material `m`.
    fn touch_series(
        &self,
        spec: &PopulationSpec,
        m: usize,
        air: &[f64; CHANNELS],
        pattern: &[bool; CHANNELS],
        rng: &mut ChaCha8Rng,
    ) -> Result<SeriesSet, PopulationError> {
        let mat = &spec.materials[m];
        let hand = normal(mat.hand_sd * spec.hand_share).sample(rng);
        let finger = normal(mat.hand_sd * spec.finger_share);
        let mut set = SeriesSet::new();
        for f in Finger::ALL {
            // Draw for every finger so patterns do not shift later draws.
            let offset = finger.sample(rng);
            let seed: u64 = rng.random();
            if !pattern[f.index()] {
                continue;
            }
            let delta = self.delta[m][f.index()] + hand + offset;
            let model = self.stream(&mat.fluctuation, air[f.index()] - delta);
            set.insert(f, model.synthesize(f, self.window_duration(), seed)?);
        }
        Ok(set)
    }
}

/// Generates the records, air calibrations and trial logs of a population.
/// Identical spec, configuration and seed give identical output.
pub fn generate_population(spec: &PopulationSpec, config: &SessionConfig) -> Result<PopulationData, PopulationError> {
    spec.validate()?;
    let chain = Chain::new(config, &spec.materials)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hands_per_material = spec.subjects as usize * spec.trials as usize;
    let patterns = spec
        .materials
        .iter()
        .map(|m| response_patterns(spec, m, hands_per_material, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;

    let mut data = PopulationData {
        records: Vec::with_capacity(hands_per_material * spec.materials.len()),
        air: BTreeMap::new(),
        trials: BTreeMap::new(),
    };
    for subject in 1..=spec.subjects {
        let air = chain.subject_air(spec, &mut rng);
        data.air.insert(subject, chain.air_series(spec, &air, &mut rng)?);
        for (m, mat) in spec.materials.iter().enumerate() {
            for trial in 1..=spec.trials {
                let slot = (subject as usize - 1) * spec.trials as usize + (trial as usize - 1);
                let pattern = patterns[m][slot];
                let log = trial_log_path(subject, &mat.name, trial);
                data.trials
                    .insert(log.clone(), chain.touch_series(spec, m, &air, &pattern, &mut rng)?);
                data.records.push(TrialRecord {
                    subject,
                    material: mat.name.clone(),
                    trial,
                    responsive: pattern,
                    log,
                });
            }
        }
    }
    Ok(data)
}

/// Fingerprint of every record: air calibration of its subject, windowed
/// estimate of each trial channel, imputation of the silent ones.
pub fn fingerprint_records(data: &PopulationData, window: usize, estimator: Estimator) -> Result<Vec<Fingerprint>, PopulationError> {
    let mut baselines = BTreeMap::new();
    for (subject, set) in &data.air {
        baselines.insert(*subject, calibrate(set, window)?);
    }
    data.records
        .iter()
        .map(|r| {
            let baseline = baselines
                .get(&r.subject)
                .ok_or_else(|| PopulationError::Missing(format!("air calibration for subject {}", r.subject)))?;
            let set = data.trials.get(&r.log).ok_or_else(|| PopulationError::Missing(r.log.clone()))?;
            let fp = Fingerprint::build(&readings(set, window, estimator)?, baseline).map_err(|source| PopulationError::Fingerprint {
                context: r.log.clone(),
                source,
            })?;
            Ok(fp.with_material(r.material.clone()))
        })
        .collect()
}

/// Mean averaged fingerprint per material label.
pub fn material_means(fingerprints: &[Fingerprint]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for fp in fingerprints {
        let e = acc.entry(fp.material.clone().unwrap_or_default()).or_default();
        e.0 += fp.average();
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Population standard deviation of the averaged fingerprint per material.
pub fn material_spreads(fingerprints: &[Fingerprint]) -> BTreeMap<String, f64> {
    let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for fp in fingerprints {
        by.entry(fp.material.clone().unwrap_or_default()).or_default().push(fp.average());
    }
    by.into_iter().map(|(k, v)| (k, crate::signal::std_dev(&v))).collect()
}

/// Threshold classes from per-material means; materials sharing a class
/// are pooled.
pub fn class_set_from_means(
    materials: &[MaterialSpec],
    means: &BTreeMap<String, f64>,
    guard_band: f64,
) -> Result<ClassSet, PopulationError> {
    let mut by_class: BTreeMap<PermittivityClass, (f64, usize, Vec<String>)> = BTreeMap::new();
    for m in materials {
        let mean = means
            .get(&m.name)
            .ok_or_else(|| PopulationError::Missing(format!("mean fingerprint of {}", m.name)))?;
        let e = by_class.entry(m.class).or_default();
        e.0 += mean;
        e.1 += 1;
        e.2.push(m.name.clone());
    }
    let list: Vec<_> = by_class.into_iter().map(|(c, (s, n, refs))| (c, s / n as f64, refs)).collect();
    ClassSet::from_means(&list, guard_band).map_err(|e| PopulationError::Spec(e.to_string()))
}

/// Outcome of classifying freshly drawn hands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOutcome {
    pub hands: usize,
    pub correct: usize,
    /// `(true class, predicted)` counts; `None` marks unclassifiable hands.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

impl MonteCarloOutcome {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.hands as f64
    }
}

/// Draws `hands` new hands (new subjects, independent finger responses,
/// materials in rotation), runs each through calibration, fingerprinting
/// and `classes`, and tallies the outcome.
pub fn monte_carlo_classification(
    spec: &PopulationSpec,
    config: &SessionConfig,
    classes: &ClassSet,
    hands: usize,
    seed: u64,
) -> Result<MonteCarloOutcome, PopulationError> {
    spec.validate()?;
    let chain = Chain::new(config, &spec.materials)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MonteCarloOutcome {
        hands,
        correct: 0,
        confusion: BTreeMap::new(),
    };
    for h in 0..hands {
        let m = h % spec.materials.len();
        let mat = &spec.materials[m];
        let air = chain.subject_air(spec, &mut rng);
        let baseline = calibrate(&chain.air_series(spec, &air, &mut rng)?, config.window)?;
        let pattern = independent_pattern(&mat.response_rates, &mut rng);
        let set = chain.touch_series(spec, m, &air, &pattern, &mut rng)?;
        let fp = Fingerprint::build(&readings(&set, config.window, config.estimator)?, &baseline).map_err(|source| {
            PopulationError::Fingerprint {
                context: format!("hand {h}"),
                source,
            }
        })?;
        let verdict = classes.classify(fp.average());
        if verdict.label() == Some(mat.class) {
            out.correct += 1;
        }
        let predicted = match verdict {
            Classification::Class { label } => label.to_string(),
            Classification::Unclassifiable { .. } => "unclassifiable".to_string(),
        };
        *out.confusion
            .entry(mat.class.to_string())
            .or_default()
            .entry(predicted)
            .or_default() += 1;
    }
    Ok(out)
}
