use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sprayer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sprayer")).args(args).output().unwrap()
}

fn bundled(name: &str) -> String {
    let out = sprayer(&["print-config", name]);
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn verify_table1_prints_errors_and_passes() {
    let out = sprayer(&["verify-table1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("horizontal 3.21 cm"), "{text}");
    assert!(text.contains("horizontal 5.83 cm"), "{text}");
    assert!(text.contains("mean: horizontal 4.52 cm"), "{text}");
    assert!(text.contains("3-D 7.30 cm"), "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn demo_run_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "demo.toml", &bundled("demo"));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = sprayer(&["run", &cfg, "--out-dir", dir.to_str().unwrap(), "--csv"]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    for f in ["steps.jsonl", "report.json", "path.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["plants_sprayed"], 10);
    assert_eq!(report["tank"]["consumed_ml"], 2000.0);
    assert_eq!(report["timed_out"], false);
}

#[test]
fn seed_override_changes_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "demo.toml", &bundled("demo"));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(sprayer(&["run", &cfg, "--seed", "1", "--out-dir", a.to_str().unwrap()])
        .status
        .success());
    assert!(sprayer(&["run", &cfg, "--seed", "2", "--out-dir", b.to_str().unwrap()])
        .status
        .success());
    assert_ne!(
        fs::read(a.join("steps.jsonl")).unwrap(),
        fs::read(b.join("steps.jsonl")).unwrap()
    );
    let report: serde_json::Value = serde_json::from_slice(&fs::read(b.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 2);
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = bundled("straight").replace("[noise]", "[noise]\ngps_sdt_m = 0.1");
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let out = sprayer(&["run", &cfg, "--out-dir", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("gps_sdt_m"), "{}", stderr(&out));
}

#[test]
fn invalid_value_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let text = bundled("straight") + "\n[robot]\ntrack_width_m = -1.0\n";
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let out = sprayer(&["run", &cfg, "--out-dir", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("robot.track_width_m"), "{}", stderr(&out));
}

#[test]
fn missing_config_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sprayer(&["run", tmp.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn duration_cap_reports_timeout() {
    let tmp = tempfile::tempdir().unwrap();
    let text = bundled("straight").replace("max_duration_s = 200.0", "max_duration_s = 5.0");
    let cfg = write_config(tmp.path(), "short.toml", &text);
    let dir = tmp.path().join("o");
    let out = sprayer(&["run", &cfg, "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["timed_out"], true);
    assert_eq!(
        fs::read_to_string(dir.join("steps.jsonl")).unwrap().lines().count(),
        250
    );
}

#[test]
fn montecarlo_writes_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let text = bundled("demo").replace("max_duration_s = 400.0", "max_duration_s = 30.0");
    let cfg = write_config(tmp.path(), "demo.toml", &text);
    let seq = tmp.path().join("seq");
    let par = tmp.path().join("par");
    let out = sprayer(&[
        "montecarlo",
        &cfg,
        "--runs",
        "4",
        "--seed",
        "7",
        "--out-dir",
        seq.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = sprayer(&[
        "montecarlo",
        &cfg,
        "--runs",
        "4",
        "--seed",
        "7",
        "--parallel",
        "--out-dir",
        par.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let a = fs::read(seq.join("montecarlo.json")).unwrap();
    assert_eq!(a, fs::read(par.join("montecarlo.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["runs"], 4);
    assert_eq!(report["base_seed"], 7);
    // Capped at 30 s, no run finishes the path.
    assert_eq!(report["failed_runs"], 4);
    assert_eq!(report["per_run"].as_array().unwrap().len(), 4);
}

#[test]
fn zero_runs_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.toml", &bundled("straight"));
    let out = sprayer(&[
        "montecarlo",
        &cfg,
        "--runs",
        "0",
        "--out-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
