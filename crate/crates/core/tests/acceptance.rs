//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use fadsense_core::calibration::calibrate;
use fadsense_core::classify::{ccd, ReliabilityReport, TrialRecord};
use fadsense_core::coupling::{
    kurokawa_matrix, normalize_magnitudes, read_magnitude_csv, read_transducer_gains, turn_on_power, watts_to_dbm, ImpedanceMatrix,
    PortLoad, EXAMPLE_COUPLING_CSV, TRANSDUCER_GAINS_CSV,
};
use fadsense_core::export::{records_from_csv, records_to_csv};
use fadsense_core::fingerprint::{pressure_uncertainty, CalibrationBaseline, ChannelReading, Fingerprint};
use fadsense_core::ic::{code_at, AntennaModel, AntennaState, AutoTuneIC, EU_FREQUENCY_HZ};
use fadsense_core::log::{ingest_log, rows_from_series, write_log, SeriesSet};
use fadsense_core::materials::MaterialDb;
use fadsense_core::population::{
    class_set_from_means, convergence_fixture, fingerprint_records, generate_population, material_means, material_spreads,
    monte_carlo_classification, PopulationSpec,
};
use fadsense_core::signal::{convergence_error, dominant_frequency, minimum_samples, CodeSeries, Estimator, FluctuationModel, Sample};
use fadsense_core::{Finger, SessionConfig, CHANNELS};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

/// Randomized cases per property.
const CASES: u32 = 1000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn run(id: &str, title: &str, limit: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    let took = start.elapsed();
    let in_time = took <= limit;
    let ok = v.pass && in_time;
    println!(
        "[{}] {id} {title}: {} ({:.1} ms, limit {:.0} ms{})",
        if ok { "PASS" } else { "FAIL" },
        v.detail,
        took.as_secs_f64() * 1e3,
        limit.as_secs_f64() * 1e3,
        if in_time { "" } else { ", TOO SLOW" }
    );
    ok
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

// Criterion 1: the published normalized coupling map.
fn coupling_reproduction() -> Verdict {
    let (_, m) = read_magnitude_csv(EXAMPLE_COUPLING_CSV.as_bytes()).unwrap();
    let report = normalize_magnitudes(&m).unwrap();
    // Oracle: the largest off-diagonal entry of the printed map, read by hand,
    // is 2.89 (fingers II and III) and the largest entry overall is 100.
    let oracle = 2.89 / 100.0;
    let err = (report.max_offdiag_ratio - oracle).abs();
    verdict(
        err <= 1e-12 && report.max_offdiag_ratio <= 0.03,
        format!(
            "max_offdiag_ratio={:.6} (target 0.0289 ± 1e-12, claim ≤ 0.03)",
            report.max_offdiag_ratio
        ),
    )
}

// Criterion 2: power transfer of every calibrated channel.
fn power_transfer_screen() -> Verdict {
    let cfg = SessionConfig::default();
    let db = MaterialDb::builtin();
    let mut worst = f64::INFINITY;
    for a in &cfg.antennas {
        let eps = std::iter::once(1.0).chain(db.iter().map(|m| m.epsilon));
        for e in eps {
            worst = worst.min(cfg.ic.power_transfer(&a.response(e).unwrap()));
        }
    }
    // Oracle: mid-branch closed form with the default conductances.
    let (g_ic, g_a) = (cfg.ic.g_ic, cfg.antennas[0].g_a);
    let oracle = 4.0 * g_ic * g_a / (g_ic + g_a).powi(2);
    verdict(
        worst > 0.85 && (worst - oracle).abs() < 1e-12,
        format!("min τ over 5 channels and all tabulated materials = {worst:.4} (> 0.85; closed form {oracle:.4})"),
    )
}

// Criterion 3: turn-on power budget.
fn turn_on_screen() -> Verdict {
    let cfg = SessionConfig::default();
    let gains = read_transducer_gains(TRANSDUCER_GAINS_CSV.as_bytes()).unwrap();
    let mut worst = f64::NEG_INFINITY;
    let mut agree = true;
    for (finger, gain) in &gains {
        let tau = cfg.ic.power_transfer(&cfg.antennas[finger.index()].response(1.0).unwrap());
        let dbm = watts_to_dbm(turn_on_power(tau, *gain, cfg.ic_sensitivity).unwrap());
        // Oracle: the same budget in the log domain.
        let oracle = 10.0 * (cfg.ic_sensitivity / 1e-3).log10() - 10.0 * gain.log10() - 10.0 * tau.log10();
        agree &= (dbm - oracle).abs() < 1e-9;
        worst = worst.max(dbm);
    }
    verdict(
        gains.len() == CHANNELS && agree && worst <= 25.0,
        format!("max turn-on power {worst:.2} dBm over {} channels (≤ 25 dBm)", gains.len()),
    )
}

// Criterion 4: convergence windows on the liquid fixtures.
fn convergence() -> Verdict {
    let cfg = SessionConfig::default();
    let spec = PopulationSpec::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for m in &spec.materials {
        let s = convergence_fixture(&cfg, m, Finger::III).unwrap();
        let mean1 = minimum_samples(&s, 1.0, cfg.m_inf, Estimator::Mean).unwrap();
        let mean2 = minimum_samples(&s, 2.0, cfg.m_inf, Estimator::Mean).unwrap();
        let median1 = minimum_samples(&s, 1.0, cfg.m_inf, Estimator::Median).unwrap_or(usize::MAX);
        ok &= mean1 <= 10 && mean2 <= mean1 && mean1 <= median1;
        parts.push(format!("{} M0={mean1} (tol 2: {mean2}, median {median1})", m.name));
    }
    verdict(ok, format!("{}; need M0 ≤ 10 and mean ≤ median", parts.join(", ")))
}

// Criterion 5: dominant frequency of the default fluctuation.
fn spectrum() -> Verdict {
    let m = FluctuationModel::default();
    let s = m.synthesize(Finger::III, 100.0 * m.sample_period, 3).unwrap();
    let f = dominant_frequency(&s).unwrap();
    let bin = 1.0 / (s.len() as f64 * m.sample_period);
    verdict((f - 0.7).abs() <= bin + 1e-12, format!("dominant {f:.4} Hz (0.7 ± {bin:.4} Hz)"))
}

// Criterion 6: five equal channels shrink the pressure uncertainty by √5.
fn uncertainty_halving() -> Verdict {
    let mut worst: f64 = 0.0;
    for ds in [1.0, 10.0, 37.5, 141.0, -12.0] {
        let base = CalibrationBaseline::uniform(300.0);
        let readings = Finger::ALL.map(|f| ChannelReading::read(f, 300.0 - ds));
        let fp = Fingerprint::build(&readings, &base).unwrap();
        let ratio = fp.propagated_uncertainty() / pressure_uncertainty(ds);
        worst = worst.max((ratio - 1.0 / 5f64.sqrt()).abs());
    }
    verdict(worst <= 1e-12, format!("|σ̄_F/σ_p − 1/√5| ≤ {worst:.1e} (tolerance 1e-12)"))
}

// Criterion 7: reliability statistics of the default population.
fn population_statistics() -> Verdict {
    let data = generate_population(&PopulationSpec::default(), &SessionConfig::default()).unwrap();
    let r = ReliabilityReport::from_records(&data.records).unwrap();
    let c = r.ccd;
    let target = [20.0, 50.0, 70.0, 30.0, 50.0];
    let rates_ok = r.per_finger_rates.joint.iter().zip(target).all(|(a, b)| (a - b).abs() <= 10.0);
    let ok = c[0] == 100.0 && (c[1] - 90.0).abs() <= 5.0 && (c[2] - 60.0).abs() <= 10.0 && c[4] == 0.0 && rates_ok;
    let rates: Vec<String> = r.per_finger_rates.joint.iter().map(|x| format!("{x:.1}")).collect();
    verdict(
        ok && data.records.len() * CHANNELS == 450,
        format!(
            "CCD=[{:.1}, {:.1}, {:.1}, {:.1}, {:.1}] (100, 90±5, 60±10, -, 0), joint rates [{}] (20/50/70/30/50 ±10)",
            c[0],
            c[1],
            c[2],
            c[3],
            c[4],
            rates.join(", ")
        ),
    )
}

// Criterion 8: threshold classification of fresh hands.
fn end_to_end_classification() -> Verdict {
    let cfg = SessionConfig::default();
    let spec = PopulationSpec::default();
    let data = generate_population(&spec, &cfg).unwrap();
    let fps = fingerprint_records(&data, cfg.window, cfg.estimator).unwrap();
    let means = material_means(&fps);
    let spreads = material_spreads(&fps);
    let ordered = means["olive-oil"] < means["ethyl-alcohol"] && means["ethyl-alcohol"] < means["deionized-water"];
    let classes = class_set_from_means(&spec.materials, &means, 0.0).unwrap();
    let mc = monte_carlo_classification(&spec, &cfg, &classes, 1000, 8).unwrap();
    verdict(
        ordered && mc.accuracy() >= 0.99,
        format!(
            "accuracy {:.3} over {} hands (≥ 0.99); class means {:.1}/{:.1}/{:.1}, SDs {:.1}/{:.1}/{:.1}",
            mc.accuracy(),
            mc.hands,
            means["olive-oil"],
            means["ethyl-alcohol"],
            means["deionized-water"],
            spreads["olive-oil"],
            spreads["ethyl-alcohol"],
            spreads["deionized-water"]
        ),
    )
}

fn runner() -> TestRunner {
    TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    })
}

fn ic_params() -> impl Strategy<Value = AutoTuneIC> {
    (0.5e-12..5e-12f64, 0.5e-15..10e-15f64, 0u16..200, 1u16..400, 0.1e-3..2e-3f64)
        .prop_map(|(c_min, c_step, s_min, span, g_ic)| AutoTuneIC::new(c_min, c_step, s_min, s_min + span, g_ic).unwrap())
}

fn prop_saturation(r: &mut TestRunner) -> Result<(), String> {
    r.run(&(ic_params(), -1.0..1.0f64, 1e8..3e9f64), |(ic, b_a, f)| {
        let s = ic.sensor_code(&AntennaState {
            g_a: 1e-3,
            b_a,
            frequency: f,
        });
        prop_assert!(ic.s_min <= s.code && s.code <= ic.s_max);
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn prop_round_trip(r: &mut TestRunner) -> Result<(), String> {
    r.run(&(ic_params(), 0.0..1.0f64, 1e8..3e9f64), |(ic, u, f)| {
        let s = ic.s_min + ((ic.s_max - ic.s_min) as f64 * u).round() as u16;
        let b_a = -ic.susceptance(s, f).unwrap();
        prop_assert_eq!(
            ic.sensor_code(&AntennaState {
                g_a: 1e-3,
                b_a,
                frequency: f
            })
            .code,
            s
        );
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn prop_delta_monotone(r: &mut TestRunner) -> Result<(), String> {
    let strat = (
        100.0..350.0f64,
        1.0..150.0f64,
        2.0..40.0f64,
        60.0..140.0f64,
        1.0..100.0f64,
        1.0..100.0f64,
    );
    r.run(&strat, |(air, d_low, e_low, d_high_extra, e1, e2)| {
        let ic = AutoTuneIC::default();
        let model = AntennaModel::calibrate(&ic, EU_FREQUENCY_HZ, 0.35e-3, air, (e_low, d_low), (78.0, d_low + d_high_extra));
        let Ok(model) = model else { return Ok(()) };
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let s1 = code_at(&ic, &model, 1.0).unwrap().code;
        let ds = |e| i32::from(s1) - i32::from(code_at(&ic, &model, e).unwrap().code);
        prop_assert!(ds(lo) <= ds(hi), "Δs({lo}) = {} > Δs({hi}) = {}", ds(lo), ds(hi));
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn scalar(z: Complex64) -> ImpedanceMatrix {
    ImpedanceMatrix::new(DMatrix::from_element(1, 1, z), EU_FREQUENCY_HZ, vec!["I".into()]).unwrap()
}

fn prop_conjugate_null(r: &mut TestRunner) -> Result<(), String> {
    r.run(
        &(0.1..100.0f64, -500.0..500.0f64, -50.0..50.0f64, -50.0..50.0f64),
        |(re, im, dr, dx)| {
            let zc = Complex64::new(re, im);
            let load = [PortLoad::new(zc).unwrap()];
            let k = kurokawa_matrix(&scalar(zc.conj()), &load).unwrap();
            prop_assert!(k[(0, 0)].norm() < 1e-12);
            let off = zc.conj() + Complex64::new(dr, dx);
            if off.re > 0.0 && (dr.abs() > 1e-3 || dx.abs() > 1e-3) {
                prop_assert!(kurokawa_matrix(&scalar(off), &load).unwrap()[(0, 0)].norm() > 0.0);
            }
            Ok(())
        },
    )
    .map_err(|e| e.to_string())
}

fn prop_passivity(r: &mut TestRunner) -> Result<(), String> {
    let strat = (1usize..=5).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(-10.0..10.0f64, n * n),
            prop::collection::vec(-100.0..100.0f64, n * n),
            prop::collection::vec((0.5..20.0f64, -100.0..100.0f64), n),
        )
    });
    r.run(&strat, |(n, a, x, loads)| {
        let a = DMatrix::from_row_slice(n, n, &a);
        let res = &a * a.transpose();
        let x = DMatrix::from_row_slice(n, n, &x);
        let x = (&x + x.transpose()) * 0.5;
        let z = DMatrix::from_fn(n, n, |i, j| Complex64::new(res[(i, j)], x[(i, j)]));
        let labels = (0..n).map(|i| Finger::ALL[i].to_string()).collect();
        let z = ImpedanceMatrix::new(z, EU_FREQUENCY_HZ, labels).unwrap();
        let loads: Vec<PortLoad> = loads
            .iter()
            .map(|&(re, im)| PortLoad::new(Complex64::new(re, im)).unwrap())
            .collect();
        let k = match kurokawa_matrix(&z, &loads) {
            Ok(k) => k,
            // Passive Z plus positive-real loads is always invertible.
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let smax = k.singular_values().max();
        prop_assert!(smax <= 1.0 + 1e-9, "σmax = {smax}");
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn records_strategy() -> impl Strategy<Value = Vec<TrialRecord>> {
    prop::collection::vec((1u32..20, 0usize..3, 1u32..4, prop::array::uniform5(any::<bool>())), 1..60).prop_map(|v| {
        v.into_iter()
            .map(|(subject, m, trial, responsive)| {
                let material = ["olive-oil", "ethyl-alcohol", "deionized-water"][m].to_string();
                TrialRecord {
                    log: format!("trials/s{subject:02}_{material}_t{trial}.csv"),
                    subject,
                    material,
                    trial,
                    responsive,
                }
            })
            .collect()
    })
}

fn prop_ccd_monotone(r: &mut TestRunner) -> Result<(), String> {
    r.run(&records_strategy(), |recs| {
        let c = ccd(&recs).unwrap();
        prop_assert!(c.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(c.iter().all(|v| (0.0..=100.0).contains(v)));
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn prop_imputation(r: &mut TestRunner) -> Result<(), String> {
    let strat =
        prop::array::uniform5(prop::option::weighted(0.6, 80.0..400.0f64)).prop_filter("one responsive", |c| c.iter().any(Option::is_some));
    r.run(&(strat, 80.0..400.0f64), |(codes, air)| {
        let readings: Vec<ChannelReading> = Finger::ALL
            .iter()
            .zip(codes)
            .map(|(&channel, code)| ChannelReading { channel, code })
            .collect();
        let fp = Fingerprint::build(&readings, &CalibrationBaseline::uniform(air)).unwrap();
        let resp: Vec<f64> = codes.iter().flatten().map(|c| air - c).collect();
        let oracle = resp.iter().sum::<f64>() / resp.len() as f64;
        prop_assert!((fp.average() - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()));
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn prop_delta_at_m_inf(r: &mut TestRunner) -> Result<(), String> {
    let strat = (prop::collection::vec(0u16..=511, 2..240), 0.0..1.0f64);
    r.run(&strat, |(codes, u)| {
        let s = CodeSeries::from_codes(Finger::II, 0.7, &codes).unwrap();
        let m_inf = 2 + ((codes.len() - 2) as f64 * u) as usize;
        prop_assert_eq!(convergence_error(&s, m_inf, m_inf).unwrap(), 0.0);
        Ok(())
    })
    .map_err(|e| e.to_string())
}

fn series_strategy() -> impl Strategy<Value = SeriesSet> {
    prop::collection::btree_map(0usize..5, prop::collection::btree_map(0u32..100_000, 0u16..=511, 1..30), 1..5).prop_map(|m| {
        m.into_iter()
            .map(|(ch, samples)| {
                let f = Finger::ALL[ch];
                let samples = samples
                    .into_iter()
                    .map(|(t, code)| Sample {
                        t: f64::from(t) * 0.001 + 0.1,
                        code,
                    })
                    .collect();
                (f, CodeSeries::new(f, samples).unwrap())
            })
            .collect::<BTreeMap<_, _>>()
    })
}

fn prop_export_round_trip(r: &mut TestRunner) -> Result<(), String> {
    r.run(&(series_strategy(), records_strategy(), 1u32..50), |(set, recs, subject)| {
        let back = ingest_log(write_log(&rows_from_series(&set, subject)).as_bytes()).unwrap();
        prop_assert_eq!(back, set);
        prop_assert_eq!(records_from_csv(records_to_csv(&recs).as_bytes()).unwrap(), recs);
        Ok(())
    })
    .map_err(|e| e.to_string())
}

// Criterion 9: randomized property suites.
fn property_suites() -> Verdict {
    type Prop = fn(&mut TestRunner) -> Result<(), String>;
    let props: [(&str, Prop); 9] = [
        ("saturation clamping", prop_saturation),
        ("sensor-code round trip", prop_round_trip),
        ("Δs monotone in ε", prop_delta_monotone),
        ("conjugate-match null", prop_conjugate_null),
        ("passivity", prop_passivity),
        ("CCD monotone", prop_ccd_monotone),
        ("imputation keeps the mean", prop_imputation),
        ("δ[M∞] = 0", prop_delta_at_m_inf),
        ("export/ingest round trip", prop_export_round_trip),
    ];
    let mut failures = Vec::new();
    for (name, p) in props {
        if let Err(e) = p(&mut runner()) {
            failures.push(format!("{name}: {e}"));
        }
    }
    if failures.is_empty() {
        verdict(true, format!("{} properties × {CASES} cases, 0 failures", props.len()))
    } else {
        verdict(false, failures.join("; "))
    }
}

// Air calibration used by the chain: a sanity line, not a numbered criterion.
fn calibration_consistency() -> Verdict {
    let m = FluctuationModel {
        sawtooth_amplitude: 1.0,
        transient_amplitude: 0.0,
        noise_sd: 0.0,
        ..FluctuationModel::steady(150)
    };
    let air: SeriesSet = Finger::ALL.iter().map(|&f| (f, m.synthesize(f, 7.0, 0).unwrap())).collect();
    let b = calibrate(&air, 10).unwrap();
    let worst = b.codes.values().map(|c| (c - 150.0).abs()).fold(0.0, f64::max);
    verdict(worst <= 0.5, format!("sawtooth air baseline within {worst:.2} of 150 (≤ 0.5)"))
}

fn main() {
    let results = [
        run("C1", "coupling reproduction", secs(1), coupling_reproduction),
        run("C2", "power-transfer screen", secs(1), power_transfer_screen),
        run("C3", "turn-on screen", secs(1), turn_on_screen),
        run("C4", "convergence window", secs(5), convergence),
        run("C5", "dominant frequency", secs(1), spectrum),
        run("C6", "uncertainty halving", secs(1), uncertainty_halving),
        run("C7", "population statistics", secs(5), population_statistics),
        run("C8", "end-to-end classification", secs(30), end_to_end_classification),
        run("C9", "property suites", secs(600), property_suites),
        run("--", "air calibration averaging", secs(1), calibration_consistency),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
