use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_beaconsim"))
}

fn run_ok(args: &[&str]) -> PathBuf {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
}

fn run_err(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "stderr not one line: {err}");
    assert!(err.starts_with("error: "));
    out
}

/// Relative path -> bytes of every file in a run directory.
fn contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const TWO_NODES: &str =
    r#"{"kind": "static", "environment": "highway", "positions": [[0, 0], [100, 0]], "duration_s": 10}"#;
const HIGHWAY: &str =
    r#"{"kind": "highway", "length_m": 1500, "lanes": 2, "vehicles": 25, "mean_speed_mps": 30, "duration_s": 5}"#;

#[test]
fn two_node_log_has_one_row_per_emission_and_receiver() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "two.json", TWO_NODES);
    for (rate, rows) in [(10.0, 2 * 100), (1.0, 2 * 10), (5.0, 2 * 50)] {
        let beacon = write(
            tmp.path(),
            "beacon.json",
            &format!(r#"{{"rate_hz": {rate}, "tx_power_dbm": {{"vehicle": 30, "roadside": 30}}}}"#),
        );
        let out = tmp.path().join("runs");
        let dir = run_ok(&[
            "simulate",
            "--scenario",
            &sc,
            "--beacon",
            &beacon,
            "--seed",
            "1",
            "--out",
            out.to_str().unwrap(),
        ]);
        let log = fs::read_to_string(dir.join("log.csv")).unwrap();
        assert_eq!(log.lines().count(), 1 + rows, "rate {rate}");
        assert!(log.lines().skip(1).all(|l| l.ends_with(",true")));
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("log.json")).unwrap()).unwrap();
        assert_eq!(meta["emissions"], serde_json::json!([rows / 2, rows / 2]));
        assert!(dir.join("manifest.json").exists());
    }
}

#[test]
fn missing_config_is_a_one_line_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let out = run_err(&[
        "simulate",
        "--scenario",
        missing.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn seed_is_mandatory() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "two.json", TWO_NODES);
    let out = run_err(&["simulate", "--scenario", &sc, "--out", tmp.path().to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    run_err(&["sweep", "--spec", &sc, "--scenario", &sc]);
    run_err(&["gen-scenario", "--config", &sc]);
}

#[test]
fn bad_config_values_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "two.json", TWO_NODES);
    let beacon = write(tmp.path(), "beacon.json", r#"{"rate_hz": 20}"#);
    let out = run_err(&[
        "simulate",
        "--scenario",
        &sc,
        "--beacon",
        &beacon,
        "--seed",
        "1",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rate_hz"));
    let unknown = write(tmp.path(), "channel.json", r#"{"sensitivity": -90}"#);
    run_err(&[
        "simulate",
        "--scenario",
        &sc,
        "--channel",
        &unknown,
        "--seed",
        "1",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
}

#[test]
fn outputs_do_not_depend_on_workers_or_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "hw.json", HIGHWAY);
    let spec = write(
        tmp.path(),
        "spec.json",
        r#"{"powers_dbm": [5, 20], "rates_hz": [2, 10], "windows_s": [1]}"#,
    );
    let mut seen: Vec<BTreeMap<String, Vec<u8>>> = Vec::new();
    for (i, workers) in ["1", "3", "1"].iter().enumerate() {
        let out = tmp.path().join(format!("runs{i}"));
        let out = out.to_str().unwrap();
        let sim = run_ok(&[
            "--workers",
            workers,
            "simulate",
            "--scenario",
            &sc,
            "--seed",
            "7",
            "--out",
            out,
        ]);
        let log = sim.join("log.csv");
        let ana = run_ok(&[
            "analyze",
            "--log",
            log.to_str().unwrap(),
            "--min-samples",
            "5",
            "--rnar-R",
            "150",
            "--out",
            out,
            "--workers",
            workers,
        ]);
        let fit = run_ok(&[
            "fit-z",
            "--pdr",
            ana.join("pdr.csv").to_str().unwrap(),
            "--nar",
            ana.join("nar.csv").to_str().unwrap(),
            "--out",
            out,
        ]);
        let sweep = run_ok(&[
            "sweep",
            "--spec",
            &spec,
            "--scenario",
            &sc,
            "--seed",
            "7",
            "--out",
            out,
            "--workers",
            workers,
        ]);
        let mut all = BTreeMap::new();
        for (tag, dir) in [("sim", &sim), ("ana", &ana), ("sweep", &sweep)] {
            assert!(dir.file_name().unwrap().to_str().unwrap().starts_with(match tag {
                "sim" => "simulate-",
                "ana" => "analyze-",
                _ => "sweep-",
            }));
            for (k, v) in contents(dir) {
                // Input paths differ per output root; everything else must match.
                if k != "manifest.json" {
                    all.insert(format!("{tag}/{k}"), v);
                }
            }
        }
        all.insert("fit/model.json".into(), fs::read(fit.join("model.json")).unwrap());
        all.insert(
            "names".into(),
            format!("{:?}", [sim.file_name(), sweep.file_name()]).into_bytes(),
        );
        seen.push(all);
    }
    assert!(seen[0].len() > 10);
    assert_eq!(seen[0], seen[1]);
    assert_eq!(seen[0], seen[2]);
}

#[test]
fn generated_scenario_round_trips_through_trace_files() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "hw.json", HIGHWAY);
    let out = tmp.path().join("runs");
    let out = out.to_str().unwrap();
    let gen = run_ok(&["gen-scenario", "--config", &sc, "--seed", "4", "--out", out]);
    let direct = run_ok(&["simulate", "--scenario", &sc, "--seed", "4", "--out", out]);
    let replay = run_ok(&[
        "simulate",
        "--scenario",
        gen.join("scenario.json").to_str().unwrap(),
        "--seed",
        "4",
        "--out",
        out,
    ]);
    assert_ne!(direct, replay);
    assert_eq!(
        fs::read(direct.join("log.csv")).unwrap(),
        fs::read(replay.join("log.csv")).unwrap()
    );
}

#[test]
fn validate_reports_zero_difference_for_identical_series() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write(
        tmp.path(),
        "a.csv",
        "bin_center_m,mean,std,n\n25,0.9,0.1,50\n75,0.8,0.1,50\n125,0.5,0.2,50\n",
    );
    let b = write(
        tmp.path(),
        "b.csv",
        "bin_center_m,mean,std,n\n25,0.9,0,50\n75,0.8,0,50\n",
    );
    let out = tmp.path().join("runs");
    let out = out.to_str().unwrap();
    let dir = run_ok(&["validate", "--measured", &a, "--model", &a, "--out", out]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["mean_abs_diff"], 0.0);
    run_err(&["validate", "--measured", &a, "--model", &b, "--out", out]);
    run_ok(&[
        "validate",
        "--measured",
        &a,
        "--model",
        &b,
        "--common-bins",
        "--out",
        out,
    ]);
}
