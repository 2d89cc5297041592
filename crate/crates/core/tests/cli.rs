//! End-to-end runs of the `covlab` binary.

use std::path::Path;
use std::process::{Command, Output};

fn covlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covlab")).args(args).current_dir(dir).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: &str = "schema_version = 1\nseed = 7\nreplicates = 3\n[population]\npersons = 6000\n";

#[test]
fn simulate_validate_estimate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();

    ok(&covlab(&["simulate", "--config", "small.toml", "--out", "world"], dir));
    for f in ["census.csv", "pes.csv", "codes.csv", "weights.csv", "population.csv", "ledger.json", "config.toml"] {
        assert!(dir.join("world").join(f).exists(), "{f}");
    }
    let report = ok(&covlab(&["validate", "--config", "world/config.toml", "--input", "world"], dir));
    assert_eq!(report.lines().filter(|l| l.ends_with(": ok")).count(), 2);

    let text = ok(&covlab(
        &["estimate", "--input", "world", "--config", "small.toml", "--procedure", "a,c", "--f30", "numerator", "--out", "est"],
        dir,
    ));
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let header = rows.headers().unwrap().clone();
    assert_eq!(&header, vec!["group", "method", "t_hat", "c", "u_hat", "r_hat", "status"]);
    let rows: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    let national: Vec<_> = rows.iter().filter(|r| &r[0] == "national").collect();
    let methods: Vec<&str> = national.iter().map(|r| &r[1]).collect();
    assert_eq!(methods, ["iran-numerator", "proc-a", "proc-c"]);
    for r in national {
        assert_eq!(&r[6], "ok");
        let t: f64 = r[2].parse().unwrap();
        assert!((t - 6000.0).abs() < 600.0, "{t}");
    }
    assert_eq!(std::fs::read_to_string(dir.join("est/estimates.csv")).unwrap(), text);
}

#[test]
fn experiment_writes_outputs_and_honours_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
    let stdout = ok(&covlab(
        &["experiment", "--config", "small.toml", "--seed", "8", "--replicates", "2", "--procedure", "b", "--out", "exp"],
        dir,
    ));
    assert!(stdout.starts_with("seed 8  replicates 2"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("exp/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 8);
    assert!(summary["summary"].as_array().unwrap().iter().all(|r| r["method"] == "proc-b"));
    let csv = std::fs::read_to_string(dir.join("exp/replicates.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with("0,") || l.starts_with("1,")));
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("bad.toml"), "schema_version = 9\n").unwrap();

    let out = covlab(&["experiment", "--config", "bad.toml"], dir);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema_version 9"));

    let out = covlab(&["validate", "--config", "bad.toml"], dir);
    assert!(!out.status.success());

    std::fs::create_dir(dir.join("empty")).unwrap();
    let out = covlab(&["estimate", "--input", "empty"], dir);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let out = covlab(&["experiment", "--procedure", "z"], dir);
    assert!(!out.status.success());
}
