use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stvs_core::scenario::bundled;
use stvs_core::tuning::TuningFile;

fn stvs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stvs"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn report(dir: &Path, name: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join(format!("{name}.report.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn optimized(dir: &Path, scenario: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["optimize", scenario];
    args.extend_from_slice(extra);
    let o = stvs(dir, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join(format!("{scenario}.tunings.scn"))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn optimize_writes_tunings_and_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = stvs(dir.path(), &["optimize", "two_device"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("two_device.tunings.scn") && stdout.contains("two_device.report.json"));
    let r = report(dir.path(), "two_device");
    let opt = &r["optimizer"];
    assert_eq!(opt["status"], "OPTIMAL");
    assert!(opt["constraint_violation"].as_f64().unwrap() <= 1e-8);
    assert!(opt["iterations"].as_u64().unwrap() > 0);
    let file = TuningFile::load(dir.path().join("two_device.tunings.scn")).unwrap();
    let sc = stvs_core::scenario::Scenario::from_toml_str(bundled::TWO_DEVICE).unwrap();
    file.validate(&sc).unwrap();
}

#[test]
fn table_report_has_the_four_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = stvs(dir.path(), &["optimize", "two_device", "--report", "table1"]);
    let out = String::from_utf8_lossy(&o.stdout);
    let header = out.lines().next().unwrap();
    for col in ["Objective", "Constraint violation", "Solution time/s", "Iteration"] {
        assert!(header.contains(col), "{header}");
    }
}

#[test]
fn shared_presets_are_the_same_for_every_fault() {
    let dir = tempfile::tempdir().unwrap();
    let path = optimized(dir.path(), "ieee14_ibr", &["--preset-sharing", "shared", "--faults", "F4,F9", "--starts", "1"]);
    let sc = stvs_core::scenario::Scenario::from_toml_str(bundled::IEEE14_IBR).unwrap();
    let file = TuningFile::load(path).unwrap();
    let (a, b) = (file.presets_for(&sc, "F4").unwrap(), file.presets_for(&sc, "F9").unwrap());
    assert_eq!(a, b);
}

#[test]
fn bad_scenarios_exit_with_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.scn", "");
    let o = stvs(dir.path(), &["optimize", &empty]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("schema"), "{}", stderr(&o));

    let dangling = bundled::TWO_DEVICE.replace("id = \"F1\"\nbus = 3", "id = \"F1\"\nbus = 99");
    let p = write(dir.path(), "dangling.scn", &dangling);
    let o = stvs(dir.path(), &["simulate", &p, "--baseline"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("F1"), "{}", stderr(&o));

    let o = stvs(dir.path(), &["simulate", "no_such_file.scn", "--baseline"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_needs_tunings_unless_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let o = stvs(dir.path(), &["simulate", "two_device"]);
    assert_eq!(code(&o), 1);
    let o = stvs(dir.path(), &["simulate", "two_device", "--baseline"]);
    assert!(matches!(code(&o), 0 | 2), "{}", stderr(&o));
    assert!(dir.path().join("two_device.F1.baseline.traj.csv").exists());
    let r = report(dir.path(), "two_device");
    assert_eq!(r["verdicts"][0]["scheme"], "baseline");
    let secure = r["verdicts"][0]["secure"].as_bool().unwrap();
    assert_eq!(code(&o), if secure { 0 } else { 2 });
}

#[test]
fn decimation_reduces_rows_tenfold() {
    let dir = tempfile::tempdir().unwrap();
    let rows = |d: &str| {
        let o = stvs(dir.path(), &["simulate", "two_device", "--baseline", "--decimate", d]);
        assert!(matches!(code(&o), 0 | 2));
        std::fs::read_to_string(dir.path().join("two_device.F1.baseline.traj.csv")).unwrap().lines().count() - 1
    };
    let (full, thin) = (rows("1"), rows("10"));
    assert_eq!((full - 1) / 10 + 1, thin);
}

#[test]
fn simulate_output_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let t = optimized(dir.path(), "two_device", &[]);
    let t = t.display().to_string();
    let run = || {
        stvs(dir.path(), &["simulate", "two_device", "--tunings", &t]);
        std::fs::read(dir.path().join("two_device.F1.traj.csv")).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn verify_reports_one_row_per_fault_and_moment() {
    let dir = tempfile::tempdir().unwrap();
    let t = optimized(dir.path(), "ieee14_ibr", &["--starts", "1"]).display().to_string();
    let o = stvs(dir.path(), &["verify", "ieee14_ibr", "--tunings", &t]);
    assert!(matches!(code(&o), 0 | 2), "{}", stderr(&o));
    let r = report(dir.path(), "ieee14_ibr");
    let rows = r["moment_errors"].as_array().unwrap();
    assert_eq!(rows.len(), 3 * 6);
    for row in rows {
        assert!(row["max"].as_f64().unwrap() <= 5e-3, "{row}");
    }
    assert_eq!(r["verdicts"].as_array().unwrap().len(), 6);
}

#[test]
fn verify_rejects_tunings_outside_the_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let t = optimized(dir.path(), "two_device", &[]);
    let text = std::fs::read_to_string(&t).unwrap();
    let tampered: String = text
        .lines()
        .map(|l| if l.starts_with("x_virtual") { "x_virtual = 50.0".to_string() } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    let p = write(dir.path(), "tampered.scn", &tampered);
    let o = stvs(dir.path(), &["verify", "two_device", "--tunings", &p]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("x_virtual"), "{}", stderr(&o));
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let t = optimized(dir.path(), "ieee14_ibr", &["--starts", "1"]).display().to_string();
    let run = |threads: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_stvs"))
            .args(["verify", "ieee14_ibr", "--tunings", &t, "--out-dir"])
            .arg(dir.path())
            .env("STVS_THREADS", threads)
            .output()
            .unwrap();
        assert!(matches!(code(&o), 0 | 2));
        let mut r = report(dir.path(), "ieee14_ibr");
        r["outputs"] = serde_json::Value::Null;
        r
    };
    assert_eq!(run("1"), run("4"));
}

fn sweep_rows(dir: &Path, scenario: &str, extra: &[&str]) -> Vec<Vec<f64>> {
    let mut args = vec!["sweep", scenario];
    args.extend_from_slice(extra);
    let o = stvs(dir, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let path = String::from_utf8_lossy(&o.stdout).lines().find(|l| l.contains(".sweep_")).unwrap().to_string();
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), stvs::SWEEP_HEADER);
    lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn sweep_rejects_unknown_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let o = stvs(dir.path(), &["sweep", "two_device", "--param", "gain", "--values", "1"]);
    assert_eq!(code(&o), 1);
    for name in stvs::SWEEP_PARAMS {
        assert!(stderr(&o).contains(name));
    }
}

#[test]
fn smaller_virtual_reactance_means_a_shallower_sag_until_the_limit() {
    let dir = tempfile::tempdir().unwrap();
    let mild = bundled::TWO_DEVICE.replace("x_f = 0.2", "x_f = 1.0");
    let p = write(dir.path(), "mild.scn", &mild);
    let rows = sweep_rows(dir.path(), &p, &["--param", "x_virtual", "--values", "0.4,0.2,0.1,0.05"]);
    let mut prev: Option<f64> = None;
    for r in &rows {
        if r[4] > 1.2 - 1e-6 {
            break;
        }
        if let Some(p) = prev {
            assert!(r[1] >= p - 1e-12, "{rows:?}");
        }
        prev = Some(r[1]);
    }
    assert!(prev.is_some(), "limiter engaged at every value: {rows:?}");
}

#[test]
fn reactive_gain_leaves_the_fault_instant_sag_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep_rows(dir.path(), "two_device", &["--param", "k_q", "--values", "1,2,4", "--baseline"]);
    for r in &rows[1..] {
        assert_eq!(r[1], rows[0][1]);
    }
}

#[test]
fn single_value_sweep_matches_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let t = optimized(dir.path(), "two_device", &[]).display().to_string();
    // Overwrite the tuned value with itself so the sweep equals the file.
    let file = TuningFile::load(&t).unwrap();
    let x = file.gfm[0].x_virtual;
    let rows_same = sweep_rows(dir.path(), "two_device", &["--param", "x_virtual", "--values", &x.to_string(), "--tunings", &t]);
    let o = stvs(dir.path(), &["simulate", "two_device", "--tunings", &t, "--decimate", "1"]);
    assert!(matches!(code(&o), 0 | 2));
    let csv = std::fs::read_to_string(dir.path().join("two_device.F1.traj.csv")).unwrap();
    let at_fault = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .find(|r| (r[0] - 0.1).abs() < 1e-9)
        .unwrap();
    assert_eq!(rows_same[0][1], at_fault[3]);
}
