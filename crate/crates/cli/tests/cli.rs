use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scooterbench")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sweep_then_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(&["sweep", "--grades", "0,0.02", "--strategy", "both", "--seed", "3", "--out", path(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["sweep_records.csv", "improvements.csv", "per_km.csv", "engine_points.csv", "efm_flags.csv"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    assert!(dir.path().join("channels").join("vc_+0.0pct").join("can_20hz.csv").is_file());

    let before = fs::read(dir.path().join("improvements.csv")).unwrap();
    let per_km = fs::read(dir.path().join("per_km.csv")).unwrap();
    let again = bench(&["report", "--in", path(dir.path()), "--format", "csv"]);
    assert_eq!(code(&again), 0, "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(fs::read(dir.path().join("improvements.csv")).unwrap(), before);
    assert_eq!(fs::read(dir.path().join("per_km.csv")).unwrap(), per_km);
    assert!(!dir.path().join(".staging").exists());
}

#[test]
fn single_strategy_sweep_has_no_improvement_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(&["sweep", "--grades", "0", "--strategy", "vc", "--out", path(dir.path())]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(dir.path().join("improvements.csv")).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    assert_eq!(code(&bench(&["sweep", "--grades", "0.05", "--out", out])), 2);
    assert_eq!(code(&bench(&["sweep", "--strategy", "sideways", "--out", out])), 2);
    assert_eq!(code(&bench(&["coastdown", "--config", "/nonexistent/bench.cfg", "--out", out])), 2);

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "[engine]\nturbo = 1\n").unwrap();
    assert_eq!(code(&bench(&["road-vs-dyno", "--config", path(&cfg), "--out", out])), 2);
    assert_eq!(code(&bench(&["report", "--in", out, "--format", "xlsx"])), 2);
    assert_eq!(code(&bench(&["frobnicate"])), 2);
}

#[test]
fn report_without_sweep_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(&["report", "--in", path(dir.path())]);
    assert_eq!(code(&out), 3);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn coastdown_and_road_vs_dyno_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("override.cfg");
    fs::write(&cfg, "# lighter rider\n[vehicle]\nmass_rider = 75\n").unwrap();

    let out = bench(&["coastdown", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("coastdown_report.csv")).unwrap();
    assert!(text.starts_with("key,value\nquad_coeff,"), "{text}");

    let out = bench(&["road-vs-dyno", "--out", path(dir.path())]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(dir.path().join("road_vs_dyno.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(String::from_utf8_lossy(&out.stdout).contains("25 km/h"));
}
