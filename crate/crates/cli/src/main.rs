//! `fadsense` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fadsense_core::calibration::{calibrate, readings};
use fadsense_core::classify::{suggest_channel_subset, ClassSet, ReliabilityReport};
use fadsense_core::coupling::{
    kurokawa_matrix, normalize_coupling, normalize_magnitudes, read_magnitude_csv, read_transducer_gains, turn_on_power, watts_to_dbm,
    CouplingError, ImpedanceMatrix, PortLoad, TRANSDUCER_GAINS_CSV,
};
use fadsense_core::export::{self, write_atomic, ExportError};
use fadsense_core::fingerprint::{CalibrationBaseline, Fingerprint, FingerprintError, FingerprintRecord};
use fadsense_core::ic::code_at;
use fadsense_core::log::{ingest_log_file, write_series_csv, LogError, SeriesSet};
use fadsense_core::materials::MaterialDb;
use fadsense_core::population::{
    fingerprint_records, generate_population, material_means, monte_carlo_classification, PopulationError, PopulationSpec, ResponseModel,
};
use fadsense_core::signal::{amplitude_spectrum, convergence_curve, dominant_frequency, minimum_samples, Estimator, SignalError};
use fadsense_core::{Finger, PermittivityClass, SessionConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "fadsense", version, about = "Multi-channel RFID fingertip dielectric sensing toolkit")]
struct Cli {
    /// Session configuration file (`key = value unit` lines).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic test population (records, air and trial logs).
    Simulate(SimulateArgs),
    /// Build an air-calibration baseline from a read log.
    Calibrate(CalibrateArgs),
    /// Compute digital fingerprints from read logs.
    Fingerprint(FingerprintArgs),
    /// Classify fingerprints by permittivity class.
    Classify(ClassifyArgs),
    /// Coupling analysis of a multiport antenna and turn-on power budget.
    Coupling(CouplingArgs),
    /// Reliability statistics of a population or convergence of a series.
    Stats(StatsArgs),
    /// Plot data and SVG charts.
    #[command(subcommand)]
    Export(ExportCommand),
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = fadsense_core::population::DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    subjects: u32,
    #[arg(long, default_value_t = 3)]
    trials: u32,
    /// Draw finger responses independently instead of matching the CCD target.
    #[arg(long)]
    independent: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Read log recorded with the hand in air.
    #[arg(long)]
    log: PathBuf,
    /// Baseline JSON to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FingerprintArgs {
    /// Population directory written by `simulate`; fingerprints every record.
    #[arg(long, conflicts_with_all = ["baseline", "log"])]
    population: Option<PathBuf>,
    /// Baseline JSON written by `calibrate`.
    #[arg(long, requires = "log")]
    baseline: Option<PathBuf>,
    /// Read log of one touch.
    #[arg(long, requires = "baseline")]
    log: Option<PathBuf>,
    /// Material label attached to a single fingerprint.
    #[arg(long)]
    material: Option<String>,
    /// Fingerprint JSON to write; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Fingerprint JSON to classify.
    #[arg(long)]
    fingerprints: PathBuf,
    /// Labelled fingerprints whose material means place the thresholds;
    /// defaults to the classified set itself.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Also classify this many freshly simulated hands.
    #[arg(long)]
    monte_carlo: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CouplingArgs {
    /// Impedance matrix file (`re+imj` tokens, one row per port).
    #[arg(long, conflicts_with = "magnitudes")]
    zmat: Option<PathBuf>,
    /// Precomputed |K| magnitudes as CSV (`port,I,II,...`).
    #[arg(long)]
    magnitudes: Option<PathBuf>,
    /// Chip impedance for every port, e.g. `2.8-76j`.
    #[arg(long)]
    load: Option<PortLoad>,
    /// Normalized matrix CSV to write.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Per-channel transducer gains (dB) for the turn-on budget; `builtin`
    /// uses the shipped fixture.
    #[arg(long)]
    gains: Option<String>,
}

#[derive(Args)]
struct StatsArgs {
    /// Population directory: CCD, per-finger rates and suggested subset.
    #[arg(long, conflicts_with = "log")]
    population: Option<PathBuf>,
    /// Read log: convergence curve and dominant frequency per channel.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Subset size for the sensor placement suggestion.
    #[arg(long, default_value_t = 3)]
    subset: usize,
    /// Convergence tolerance (codes); configuration value when omitted.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    estimator: Option<Estimator>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExportCommand {
    /// Kiviat radar chart (SVG plus CSV twin) of fingerprints.
    Kiviat {
        #[arg(long)]
        fingerprints: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// CCD bar chart of a population.
    Ccd {
        #[arg(long)]
        population: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Amplitude spectrum (SVG plus CSV twin) of one channel of a read log.
    Spectrum {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        channel: Finger,
        #[arg(long)]
        out: PathBuf,
    },
    /// Code series CSV (`timestamp_s,channel,code`) of a read log.
    Series {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    LogError,
    ExportError,
    FingerprintError,
    fadsense_core::config::ConfigError,
    serde_json::Error
);

impl From<SignalError> for Failure {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::NotConverged { .. } | SignalError::NoDominantComponent => Failure::Numerical(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<CouplingError> for Failure {
    fn from(e: CouplingError) -> Self {
        match e {
            CouplingError::Singular { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<PopulationError> for Failure {
    fn from(e: PopulationError) -> Self {
        match e {
            PopulationError::Signal(s) => s.into(),
            other => Failure::Data(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json(v: &impl serde::Serialize) -> Result<String, Failure> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn material_class(name: &str) -> Result<PermittivityClass, Failure> {
    let db = MaterialDb::builtin();
    db.get(name)
        .map(|m| PermittivityClass::of_permittivity(m.epsilon))
        .map_err(|e| Failure::Data(e.to_string()))
}

fn simulate(cfg: &SessionConfig, a: SimulateArgs) -> Outcome {
    let mut spec = PopulationSpec {
        subjects: a.subjects,
        trials: a.trials,
        seed: a.seed,
        ..PopulationSpec::default()
    };
    if a.independent {
        spec.response = ResponseModel::Independent;
    }
    let data = generate_population(&spec, cfg)?;
    let written = export::write_population(&a.out, &data)?;
    write_atomic(&a.out.join("spec.json"), to_json(&spec)?.as_bytes())?;
    println!(
        "wrote {} records, {} files under {}",
        data.records.len(),
        written.len() + 1,
        a.out.display()
    );
    Ok(())
}

fn calibrate_cmd(cfg: &SessionConfig, a: CalibrateArgs) -> Outcome {
    let air = ingest_log_file(&a.log)?;
    let baseline = calibrate(&air, cfg.window)?;
    baseline.validate(&cfg.ic)?;
    if !baseline.gaps.is_empty() {
        let gaps: Vec<String> = baseline.gaps.iter().map(Finger::to_string).collect();
        eprintln!("warning: no air data for channel(s) {}", gaps.join(", "));
    }
    write_atomic(&a.out, to_json(&baseline)?.as_bytes())?;
    Ok(())
}

fn fingerprint_cmd(cfg: &SessionConfig, a: FingerprintArgs) -> Outcome {
    let fps = if let Some(dir) = &a.population {
        let data = export::read_population(dir)?;
        fingerprint_records(&data, cfg.window, cfg.estimator)?
    } else {
        let (Some(bpath), Some(log)) = (&a.baseline, &a.log) else {
            return Err(Failure::Usage("give --population, or --baseline with --log".into()));
        };
        let baseline: CalibrationBaseline = serde_json::from_str(&read_text(bpath)?)?;
        let set = match ingest_log_file(log) {
            Err(LogError::Empty) => SeriesSet::new(),
            other => other?,
        };
        let mut fp = Fingerprint::build(&readings(&set, cfg.window, cfg.estimator)?, &baseline)?;
        if let Some(m) = &a.material {
            fp = fp.with_material(m.clone());
        }
        vec![fp]
    };
    let recs: Vec<FingerprintRecord> = fps
        .iter()
        .map(|f| FingerprintRecord {
            sigma_f: f.propagated_uncertainty_with(cfg.pressure_factor),
            ..f.to_record()
        })
        .collect();
    emit(a.out.as_deref(), &to_json(&recs)?)
}

fn load_fingerprints(path: &Path) -> Result<Vec<Fingerprint>, Failure> {
    export::fingerprints_from_json(&read_text(path)?)?
        .iter()
        .map(|r| r.to_fingerprint().map_err(Failure::from))
        .collect()
}

fn class_set_for(reference: &[Fingerprint], guard_band: f64) -> Result<ClassSet, Failure> {
    let means = material_means(reference);
    let mut by_class: BTreeMap<PermittivityClass, (f64, usize, Vec<String>)> = BTreeMap::new();
    for (name, mean) in &means {
        if name.is_empty() {
            return Err(Failure::Data("reference fingerprints need material labels".into()));
        }
        let e = by_class.entry(material_class(name)?).or_default();
        e.0 += mean;
        e.1 += 1;
        e.2.push(name.clone());
    }
    let list: Vec<_> = by_class.into_iter().map(|(c, (s, n, r))| (c, s / n as f64, r)).collect();
    ClassSet::from_means(&list, guard_band).map_err(|e| Failure::Data(e.to_string()))
}

fn classify_cmd(cfg: &SessionConfig, a: ClassifyArgs) -> Outcome {
    let fps = load_fingerprints(&a.fingerprints)?;
    let reference = match &a.reference {
        Some(p) => load_fingerprints(p)?,
        None => fps.clone(),
    };
    let classes = class_set_for(&reference, cfg.guard_band)?;
    let mut correct = 0usize;
    let mut labelled = 0usize;
    let rows: Vec<_> = fps
        .iter()
        .map(|fp| {
            let verdict = classes.classify(fp.average());
            let truth = fp.material.as_deref().and_then(|m| material_class(m).ok());
            if let Some(t) = truth {
                labelled += 1;
                correct += usize::from(verdict.label() == Some(t));
            }
            json!({ "material": fp.material, "f_bar": fp.average(), "classification": verdict })
        })
        .collect();
    let mut report = json!({
        "thresholds": classes.thresholds(),
        "classes": classes.classes(),
        "results": rows,
        "labelled": labelled,
        "correct": correct,
    });
    if let Some(hands) = a.monte_carlo {
        let mc = monte_carlo_classification(&PopulationSpec::default(), cfg, &classes, hands, a.seed)?;
        report["monte_carlo"] = json!({ "hands": mc.hands, "correct": mc.correct, "accuracy": mc.accuracy(), "confusion": mc.confusion });
    }
    emit(a.out.as_deref(), &to_json(&report)?)
}

fn coupling_cmd(cfg: &SessionConfig, a: CouplingArgs) -> Outcome {
    let load = a.load.unwrap_or(cfg.load);
    let matrix = if let Some(p) = &a.zmat {
        let z = ImpedanceMatrix::read(read_text(p)?.as_bytes())?;
        let k = kurokawa_matrix(&z, &vec![load; z.ports()])?;
        Some((z.port_labels().to_vec(), normalize_coupling(&k)?))
    } else if let Some(p) = &a.magnitudes {
        let (labels, m) = read_magnitude_csv(read_text(p)?.as_bytes())?;
        Some((labels, normalize_magnitudes(&m)?))
    } else {
        None
    };
    if matrix.is_none() && a.gains.is_none() {
        return Err(Failure::Usage("give --zmat, --magnitudes or --gains".into()));
    }
    if let Some((labels, report)) = &matrix {
        print!("{}", report.summary(labels));
        if let Some(p) = &a.csv {
            write_atomic(p, report.to_csv(labels).as_bytes())?;
        }
    }
    if let Some(src) = &a.gains {
        let text = if src == "builtin" {
            TRANSDUCER_GAINS_CSV.to_string()
        } else {
            read_text(Path::new(src))?
        };
        println!("channel,tau,transducer_gain_db,turn_on_dbm");
        for (finger, gain) in read_transducer_gains(text.as_bytes())? {
            let state = cfg.antennas[finger.index()]
                .response(1.0)
                .map_err(|e| Failure::Data(e.to_string()))?;
            let tau = cfg.ic.power_transfer(&state);
            let p = turn_on_power(tau, gain, cfg.ic_sensitivity)?;
            println!("{finger},{tau:.4},{:.1},{:.2}", 10.0 * gain.log10(), watts_to_dbm(p));
        }
    }
    Ok(())
}

fn stats_cmd(cfg: &SessionConfig, a: StatsArgs) -> Outcome {
    if let Some(dir) = &a.population {
        let data = export::read_population(dir)?;
        let report = ReliabilityReport::from_records(&data.records).map_err(|e| Failure::Data(e.to_string()))?;
        let subset = suggest_channel_subset(&report.per_finger_rates.joint, a.subset).map_err(|e| Failure::Usage(e.to_string()))?;
        let out = json!({ "report": report, "suggested_subset": subset });
        return emit(a.out.as_deref(), &to_json(&out)?);
    }
    let Some(log) = &a.log else {
        return Err(Failure::Usage("give --population or --log".into()));
    };
    let set = ingest_log_file(log)?;
    let tolerance = a.tolerance.unwrap_or(cfg.convergence_tolerance);
    let estimator = a.estimator.unwrap_or(cfg.estimator);
    let mut channels = serde_json::Map::new();
    for (finger, series) in &set {
        let mut entry = json!({ "samples": series.len() });
        if series.len() >= cfg.m_inf {
            let curve = convergence_curve(series, cfg.m_inf, estimator)?;
            entry["convergence"] = json!(curve);
            entry["minimum_samples"] = match minimum_samples(series, tolerance, cfg.m_inf, estimator) {
                Ok(m) => json!(m),
                Err(e) => json!(e.to_string()),
            };
        }
        entry["dominant_frequency_hz"] = match dominant_frequency(series) {
            Ok(f) => json!(f),
            Err(e) => json!(e.to_string()),
        };
        channels.insert(finger.to_string(), entry);
    }
    let out = json!({ "tolerance": tolerance, "estimator": estimator, "m_inf": cfg.m_inf, "channels": channels });
    emit(a.out.as_deref(), &to_json(&out)?)
}

fn export_cmd(cmd: ExportCommand) -> Outcome {
    match cmd {
        ExportCommand::Kiviat { fingerprints, out } => {
            let fps = load_fingerprints(&fingerprints)?;
            let (svg, csv) = export::export_kiviat(&fps, &out)?;
            println!("wrote {} and {}", svg.display(), csv.display());
        }
        ExportCommand::Ccd { population, out } => {
            let data = export::read_population(&population)?;
            let report = ReliabilityReport::from_records(&data.records).map_err(|e| Failure::Data(e.to_string()))?;
            write_atomic(&out, export::ccd_svg(&report).as_bytes())?;
            write_atomic(&out.with_extension("csv"), report.to_csv().as_bytes())?;
        }
        ExportCommand::Spectrum { log, channel, out } => {
            let set = ingest_log_file(&log)?;
            let series = set
                .get(&channel)
                .ok_or_else(|| Failure::Data(format!("no samples for channel {channel}")))?;
            let bins = amplitude_spectrum(series)?;
            write_atomic(&out, export::spectrum_svg(&bins).as_bytes())?;
            write_atomic(&out.with_extension("csv"), export::spectrum_csv(&bins).as_bytes())?;
        }
        ExportCommand::Series { log, out } => {
            write_atomic(&out, write_series_csv(&ingest_log_file(&log)?).as_bytes())?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let cfg = match &cli.config {
        Some(p) => SessionConfig::load(p)?,
        None => SessionConfig::default(),
    };
    // The calibrated antennas must keep every channel inside the code range.
    for f in Finger::ALL {
        code_at(&cfg.ic, &cfg.antennas[f.index()], 1.0).map_err(|e| Failure::Data(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(&cfg, a),
        Command::Calibrate(a) => calibrate_cmd(&cfg, a),
        Command::Fingerprint(a) => fingerprint_cmd(&cfg, a),
        Command::Classify(a) => classify_cmd(&cfg, a),
        Command::Coupling(a) => coupling_cmd(&cfg, a),
        Command::Stats(a) => stats_cmd(&cfg, a),
        Command::Export(c) => export_cmd(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fadsense: {f}");
            ExitCode::from(f.code())
        }
    }
}
