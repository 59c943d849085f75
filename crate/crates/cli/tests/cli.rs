//! CLI contract tests: exit codes, golden outputs, record round-trips and
//! flag precedence.

use std::path::{Path, PathBuf};
use std::process::Command;

use ossmc_cli::output::{read_records, CalibrationRecord, PriceRecord, SweepRecord};
use ossmc_cli::FormatArg;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ossmc"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn tmpfile(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ossmc-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn exit_codes() {
    // success
    let status = bin()
        .args(["price", "--config"])
        .arg(fixture("up-out-call.toml"))
        .arg("--output")
        .arg(tmpfile("ok.csv"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    // unknown estimator name: usage error from the parser
    let out = bin()
        .args(["price", "--estimator", "bogus", "--config"])
        .arg(fixture("up-out-call.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    // n_paths = 0: validation error
    let out = bin()
        .args(["price", "--n-paths", "0", "--config"])
        .arg(fixture("up-out-call.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_paths"));

    // missing required parameters
    let out = bin().args(["price", "--s0", "50"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // infeasible initial point (sigma below its lower bound)
    let bad = tmpfile("bad-calibration.toml");
    let text = std::fs::read_to_string(fixture("calibration-small.toml"))
        .unwrap()
        .replace("initial = { barrier = 0.5, sigma = 0.5 }", "initial = { barrier = 0.5, sigma = -0.1 }");
    std::fs::write(&bad, text).unwrap();
    let out = bin().arg("calibrate").arg("--config").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn golden_price_records() {
    for (format, golden) in [("csv", "golden_price.csv"), ("jsonl", "golden_price.jsonl")] {
        let out = tmpfile(golden);
        let status = bin()
            .args(["price", "--estimator", "oss-pathwise", "--format", format, "--config"])
            .arg(fixture("up-out-call.toml"))
            .arg("--output")
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        let got = std::fs::read(&out).unwrap();
        let want = std::fs::read(fixture(golden)).unwrap();
        assert_eq!(got, want, "{golden} drifted from the frozen schema bytes");
    }
}

#[test]
fn records_round_trip_through_the_reader() {
    // price
    let path = tmpfile("roundtrip_price.csv");
    bin()
        .args(["price", "--estimator", "oss-pathwise", "--config"])
        .arg(fixture("up-out-call.toml"))
        .arg("--output")
        .arg(&path)
        .status()
        .unwrap();
    let records: Vec<PriceRecord> = read_records(&path, FormatArg::Csv).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].schema, 1);
    assert_eq!(records[0].seed, 11);
    assert!(records[0].delta.is_some());

    // sweep, jsonl
    let path = tmpfile("roundtrip_sweep.jsonl");
    bin()
        .args([
            "sweep", "--param", "s0", "--from", "48", "--to", "52", "--step", "2",
            "--n-paths", "2000", "--format", "jsonl", "--config",
        ])
        .arg(fixture("up-out-call.toml"))
        .arg("--output")
        .arg(&path)
        .status()
        .unwrap();
    let records: Vec<SweepRecord> = read_records(&path, FormatArg::Jsonl).unwrap();
    assert_eq!(records.len(), 3 * 3); // 3 grid points x 3 estimators
    assert!(records.iter().all(|r| r.schema == 1));
    assert!(records
        .iter()
        .filter(|r| r.estimator == "oss_pathwise")
        .all(|r| r.delta_pathwise.is_some()));

    // calibrate
    let path = tmpfile("roundtrip_cal.csv");
    let status = bin()
        .arg("calibrate")
        .arg("--config")
        .arg(fixture("calibration-small.toml"))
        .arg("--output")
        .arg(&path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let records: Vec<CalibrationRecord> = read_records(&path, FormatArg::Csv).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].target_source, "generated");
    assert!(records[0].failure.is_none());
    assert!((records[0].fitted_barrier - 0.4).abs() < 0.05);
}

#[test]
fn flags_override_config_values() {
    let path = tmpfile("precedence.csv");
    bin()
        .args(["price", "--seed", "99", "--n-paths", "1234", "--config"])
        .arg(fixture("up-out-call.toml"))
        .arg("--output")
        .arg(&path)
        .status()
        .unwrap();
    let records: Vec<PriceRecord> = read_records(&path, FormatArg::Csv).unwrap();
    assert_eq!(records[0].seed, 99);
    assert_eq!(records[0].n_paths, 1234);
    assert_eq!(records[0].estimator, "oss"); // from the config file
}

#[test]
fn oracle_check_requires_small_n_obs() {
    let out = bin()
        .args(["oracle-check", "--config"])
        .arg(fixture("up-out-call.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "n_obs = 50 must be rejected");

    let path = tmpfile("oracle.csv");
    let status = bin()
        .args(["oracle-check", "--n-obs", "2", "--dt", "0.5", "--n-paths", "20000", "--config"])
        .arg(fixture("up-out-call.toml"))
        .arg("--output")
        .arg(&path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 6); // header + pv + 4 greeks
}

#[test]
fn calibrate_trace_is_written() {
    let path = tmpfile("cal.csv");
    let trace = tmpfile("cal_trace.csv");
    let status = bin()
        .arg("calibrate")
        .arg("--config")
        .arg(fixture("calibration-small.toml"))
        .arg("--output")
        .arg(&path)
        .arg("--trace")
        .arg(&trace)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.lines().count() > 2, "trace should contain iterations");
    assert!(text.starts_with("schema,command,method"));
}
