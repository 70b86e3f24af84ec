use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fadsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fadsense"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(fadsense(&["simulate", "--out", p(&a), "--seed", "5"]).status.success());
    assert!(fadsense(&["simulate", "--out", p(&b), "--seed", "5"]).status.success());
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    assert_eq!(ta.len(), 1 + 1 + 10 + 90);
    assert_eq!(ta, tb);
}

#[test]
fn population_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let pop = tmp.path().join("pop");
    let fps = tmp.path().join("fps.json");
    assert!(fadsense(&["simulate", "--out", p(&pop)]).status.success());
    assert!(fadsense(&["fingerprint", "--population", p(&pop), "--out", p(&fps)])
        .status
        .success());

    let out = fadsense(&["classify", "--fingerprints", p(&fps)]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["labelled"], 90);
    assert!(report["correct"].as_u64().unwrap() >= 88);
    assert_eq!(report["thresholds"].as_array().unwrap().len(), 2);

    let stats = fadsense(&["stats", "--population", p(&pop)]);
    let stats: serde_json::Value = serde_json::from_slice(&stats.stdout).unwrap();
    assert_eq!(stats["report"]["ccd"][0], 100.0);
    assert_eq!(stats["suggested_subset"], serde_json::json!(["II", "III", "V"]));

    let svg = tmp.path().join("k.svg");
    assert!(fadsense(&["export", "kiviat", "--fingerprints", p(&fps), "--out", p(&svg)])
        .status
        .success());
    let text = fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("<polygon").count(), 90);
    assert!(tmp.path().join("k.csv").exists());

    let ccd = tmp.path().join("ccd.svg");
    assert!(fadsense(&["export", "ccd", "--population", p(&pop), "--out", p(&ccd)])
        .status
        .success());
    assert_eq!(fs::read_to_string(&ccd).unwrap().matches("<rect").count(), 5);
}

#[test]
fn single_hand_with_calibration_file() {
    let tmp = tempfile::tempdir().unwrap();
    let pop = tmp.path().join("pop");
    assert!(fadsense(&["simulate", "--out", p(&pop), "--subjects", "1", "--trials", "1"])
        .status
        .success());
    let base = tmp.path().join("base.json");
    assert!(fadsense(&["calibrate", "--log", p(&pop.join("air/s01.csv")), "--out", p(&base)])
        .status
        .success());
    let out = fadsense(&[
        "fingerprint",
        "--baseline",
        p(&base),
        "--log",
        p(&pop.join("trials/s01_deionized-water_t1.csv")),
        "--material",
        "deionized-water",
    ]);
    assert!(out.status.success());
    let fp: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let f_bar = fp[0]["f_bar"].as_f64().unwrap();
    assert!(f_bar > 100.0, "water fingerprint {f_bar}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(fadsense(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fadsense(&["coupling"]).status.code(), Some(1));
    assert_eq!(fadsense(&["--help"]).status.code(), Some(0));

    let bad_log = tmp.path().join("bad.csv");
    fs::write(&bad_log, "timestamp_s,epc,channel,sensor_code,rssi_dbm\n0,E1,I,600,\n").unwrap();
    let out = fadsense(&["calibrate", "--log", p(&bad_log), "--out", p(&tmp.path().join("b.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let singular = tmp.path().join("s.zmat");
    fs::write(&singular, "frequency_hz = 867000000\nports = I\n-2.8+76j\n").unwrap();
    assert_eq!(fadsense(&["coupling", "--zmat", p(&singular)]).status.code(), Some(3));

    let cfg = tmp.path().join("bad.conf");
    fs::write(&cfg, "freq = 867 pF\n").unwrap();
    assert_eq!(
        fadsense(&["--config", p(&cfg), "coupling", "--gains", "builtin"]).status.code(),
        Some(2)
    );
}

#[test]
fn coupling_reports() {
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/");
    let out = fadsense(&[
        "coupling",
        "--magnitudes",
        &format!("{data}coupling_normalized_5port.csv"),
        "--gains",
        "builtin",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("max off-diagonal ratio: 0.0289"));
    assert!(text.contains("II <-> III"));
    for line in text.lines().skip_while(|l| !l.starts_with("channel,")).skip(1) {
        let dbm: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(dbm <= 25.0, "{line}");
    }
    let zm = fadsense(&["coupling", "--zmat", &format!("{data}example_5port.zmat")]);
    assert!(String::from_utf8(zm.stdout).unwrap().contains("cross-sensitivity: negligible"));
}

#[test]
fn spectrum_export_of_long_series() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("long.csv");
    let mut text = String::from("timestamp_s,epc,channel,sensor_code,rssi_dbm\n");
    for i in 0..100 {
        let t = i as f64 * 0.7;
        let phase = (0.7 * t).fract();
        let code = 200.0 + 3.0 * (2.0 * phase - 1.0);
        text.push_str(&format!("{t},E1,III,{},\n", code.round()));
    }
    fs::write(&log, text).unwrap();
    let svg = tmp.path().join("spec.svg");
    assert!(
        fadsense(&["export", "spectrum", "--log", p(&log), "--channel", "III", "--out", p(&svg)])
            .status
            .success()
    );
    let csv = fs::read_to_string(tmp.path().join("spec.csv")).unwrap();
    assert!(csv.starts_with("freq_hz,amplitude\n"));

    let stats = fadsense(&["stats", "--log", p(&log)]);
    let v: serde_json::Value = serde_json::from_slice(&stats.stdout).unwrap();
    let f = v["channels"]["III"]["dominant_frequency_hz"].as_f64().unwrap();
    assert!((f - 0.7).abs() <= 1.0 / 70.0 + 1e-9);
    assert!(v["channels"]["III"]["minimum_samples"].is_number());
}
