use std::path::{Path, PathBuf};
use std::process::Command;

use voltvar::cli::{exit_code, COSTS_HEADER, EXIT_CONFIG, EXIT_INTERNAL};
use voltvar::conic::SolveStatus;
use voltvar::Error;

const GOLDEN_HEADER: &str = "t,cost_stochastic,cost_deterministic,cost_ideal,\
loss_pu_stochastic,loss_pu_deterministic,loss_pu_ideal,\
exact_stochastic,exact_deterministic,exact_ideal,\
v_min_stochastic,v_min_deterministic,v_min_ideal,\
v_max_stochastic,v_max_deterministic,v_max_ideal,warnings";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_voltvar"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn write_config(dir: &Path, body: serde_json::Value) -> PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    path
}

fn gaussian_config(dir: &Path, horizon: usize, realizations: usize) -> PathBuf {
    write_config(
        dir,
        serde_json::json!({
            "feeder": fixture("feeder6.json"),
            "source": {"mode": "gaussian", "noise_sigma": 0.3, "horizon": horizon, "delay_intervals": 1},
            "schedule": {"kind": "fixed", "eta": 1.0},
            "prices": {"c0_tilde": 0.066, "c_tilde": 0.000825},
            "realizations": realizations,
            "output": "out",
            "seed": 3
        }),
    )
}

#[test]
fn costs_header_is_stable() {
    assert_eq!(COSTS_HEADER.join(","), GOLDEN_HEADER);
}

#[test]
fn missing_feeder_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        serde_json::json!({
            "feeder": "no_such_feeder.json",
            "source": {"mode": "gaussian", "noise_sigma": 0.0, "horizon": 2},
            "prices": {"c0_tilde": 0.066, "c_tilde": 0.0},
            "output": "out"
        }),
    );
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no_such_feeder.json"), "{err}");
}

#[test]
fn missing_config_and_bad_json_exit_2() {
    let out = bin().args(["run", "--config", "/nonexistent/run.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, "{ not json").unwrap();
    let out = bin().args(["run", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn two_interval_trace_gives_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("trace.csv"),
        "timestamp,bus,kind,value_pu\n0,2,pg,0.2\n0,4,qc,0.0\n30,2,pg,0.25\n30,4,qc,0.01\n",
    )
    .unwrap();
    let cfg = write_config(
        dir.path(),
        serde_json::json!({
            "feeder": fixture("feeder6.json"),
            "source": {"mode": "trace", "path": "trace.csv", "delay_intervals": 1},
            "prices": {"c0_tilde": 0.066, "c_tilde": 0.000825},
            "output": "out"
        }),
    );
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/costs.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], GOLDEN_HEADER);
    assert_eq!(lines.len(), 3);
}

#[test]
fn overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = gaussian_config(dir.path(), 6, 1);
    let out_dir = dir.path().join("elsewhere");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--realizations", "3", "--controllers", "stochastic,ideal", "--eta", "2.0", "--seed", "9"])
        .arg("--output")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["realizations"], 3);
    assert_eq!(summary["controllers"], serde_json::json!(["stochastic", "ideal"]));
    let mut rdr = csv::Reader::from_path(out_dir.join("costs.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert!(!rec[1].is_empty());
        assert!(rec[2].is_empty());
        assert!(!rec[3].is_empty());
    }
    let bad = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--controllers", "clairvoyant"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn per_realization_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        serde_json::json!({
            "feeder": fixture("feeder6.json"),
            "source": {"mode": "gaussian", "noise_sigma": 0.1, "horizon": 3},
            "prices": {"c0_tilde": 0.066, "c_tilde": 0.000825},
            "realizations": 2,
            "per_realization": true,
            "output": "out"
        }),
    );
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("out/costs_r000.csv").exists());
    assert!(dir.path().join("out/costs_r001.csv").exists());
}

#[test]
fn monte_carlo_reports_savings_over_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = gaussian_config(dir.path(), 60, 40);
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    let saving = summary["savings"]["stochastic_vs_deterministic"].as_f64().unwrap();
    assert!(saving > 0.0, "saving {saving}");
}

#[test]
fn validate_reports_fixture() {
    let out = bin().arg("validate").arg("--feeder").arg(fixture("feeder15.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["buses"], 15);
    assert_eq!(report["controllable"], serde_json::json!([5, 8, 14]));
    assert_eq!(report["nominal_within_limits"], true);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"buses": [{"id": 0, "parent": null, "kind": "load"}], "lines": []}"#).unwrap();
    let out = bin().arg("validate").arg("--feeder").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn certify_reports_exactness() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.csv");
    let q = dir.path().join("q.csv");
    std::fs::write(&p, "-0.1,0.25,-0.15,0.15,-0.12\n").unwrap();
    std::fs::write(&q, "-0.05\n-0.03\n-0.08\n-0.06\n-0.07\n").unwrap();
    let out = bin()
        .arg("certify")
        .arg("--feeder")
        .arg(fixture("feeder6.json"))
        .arg("--p")
        .arg(&p)
        .arg("--q")
        .arg(&q)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["exactness"]["exact"], true);
    assert!(report["probe"]["margin"].as_f64().unwrap() > 0.0);

    std::fs::write(&q, "-0.05\n").unwrap();
    let out = bin()
        .arg("certify")
        .arg("--feeder")
        .arg(fixture("feeder6.json"))
        .arg("--p")
        .arg(&p)
        .arg("--q")
        .arg(&q)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_code_contract() {
    assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
    assert_eq!(exit_code(&Error::Trace("x".into())), EXIT_CONFIG);
    assert_eq!(exit_code(&Error::Solver(SolveStatus::Stalled)), EXIT_INTERNAL);
    assert_eq!(exit_code(&Error::Infeasible), EXIT_INTERNAL);
}
