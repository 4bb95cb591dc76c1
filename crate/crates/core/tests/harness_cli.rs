use std::path::Path;
use std::process::Command;

use inertia_drem::csv_io::{emit_samples, ingest_csv, ingest_estimates, ingest_truth, FreqUnit};
use inertia_drem::estimator::{run_estimator, EstimatorConfig};
use inertia_drem::harness::run_pipeline;
use inertia_drem::metrics::{final_rel_err, MetricsReport};
use inertia_drem::RunConfig;

const BIN: &str = env!("CARGO_BIN_EXE_inertia-drem");

const SHORT_FLEET: &str = r#"
name = "short-fleet"

[scenario]
generator = "fleet"
duration = 25.0
dt = 0.001
seed = 11

[scenario.noise]
omega_std = 1e-7
p_pfc_std = 1e-6
p_e_std = 1e-6

[[scenario.events]]
time = 5.0
kind = "outage"
machine = 7

[estimator]
update_rule = "exponential"

[metrics]
e_avg_window = [10.0, 20.0]
"#;

fn cli(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(BIN).args(args).current_dir(cwd).env_remove("INERTIA_DREM_OUT").output().unwrap()
}

fn files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn run_scenario_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("fleet.toml"), SHORT_FLEET).unwrap();
    for out in ["a", "b"] {
        let o = cli(&["run-scenario", "--config", "fleet.toml", "--out", out], tmp.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = files(&tmp.path().join("a"));
    let b = files(&tmp.path().join("b"));
    assert_eq!(a.len(), b.len());
    assert!(a.len() >= 11, "{a:?}");
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.strip_prefix(tmp.path().join("a")).unwrap(), y.strip_prefix(tmp.path().join("b")).unwrap());
        assert!(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), "{} differs", x.display());
    }
}

#[test]
fn metrics_match_emitted_estimates() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("fleet.toml"), SHORT_FLEET).unwrap();
    let o = cli(&["run-scenario", "--config", "fleet.toml", "--out", "o"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("o/short-fleet");
    let report: MetricsReport = serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    let est = ingest_estimates(&dir.join("estimates.csv")).unwrap();
    let truth = ingest_truth(&dir.join("truth.csv")).unwrap();
    let last = est.last().unwrap();
    let from_file = final_rel_err([last.eta1_hat, last.eta2_hat], &truth.last().unwrap().theta());
    let in_memory = report.final_rel_err.unwrap();
    for i in 0..2 {
        assert!((from_file[i] - in_memory[i]).abs() <= 1e-12);
    }

    // and against a fresh in-process run of the same configuration
    let cfg = RunConfig::from_toml(SHORT_FLEET).unwrap();
    let out = run_pipeline(&cfg).unwrap();
    assert_eq!(out.est.records, est);
    assert_eq!(out.report.final_rel_err, report.final_rel_err);
}

#[test]
fn pu_and_hz_inputs_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = inertia_drem::config::preset("nominal-outage").unwrap();
    let truth = inertia_drem::harness::generate(&cfg).unwrap();
    let (pu, hz) = (tmp.path().join("pu.csv"), tmp.path().join("hz.csv"));
    emit_samples(&pu, &truth.run.samples, FreqUnit::Pu, 50.0).unwrap();
    emit_samples(&hz, &truth.run.samples, FreqUnit::Hz, 50.0).unwrap();
    let a = ingest_csv(&pu, None, 50.0).unwrap();
    let b = ingest_csv(&hz, None, 50.0).unwrap();
    assert_eq!(a, truth.run.samples);
    let est = EstimatorConfig::default();
    let ra = run_estimator(&a, &est, false).unwrap();
    let rb = run_estimator(&b, &est, false).unwrap();
    // relative to the parameter scale: early estimates sit near 0.2 eta
    let scale = truth.run.truth[0].theta().as_array();
    let mut worst = 0.0f64;
    for (x, y) in ra.records.iter().zip(&rb.records) {
        worst = worst.max((x.eta1_hat - y.eta1_hat).abs() / scale[0]);
        worst = worst.max((x.eta2_hat - y.eta2_hat).abs() / scale[1]);
    }
    assert!(worst <= 1e-12, "{worst:e}");
}

#[test]
fn simulate_estimate_replay_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["simulate", "--preset", "nominal-outage", "--unit", "hz"])
        .current_dir(tmp.path())
        .env("INERTIA_DREM_OUT", "sim")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("sim/samples.csv").exists());

    let o = cli(&["estimate", "sim/samples.csv", "--truth", "sim/truth.csv", "--gamma1", "1e10", "--delay", "2", "--out", "est"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: MetricsReport = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("est/metrics.json")).unwrap()).unwrap();
    let e = report.final_rel_err.unwrap();
    assert!(e[0] < 0.02 && e[1] < 0.02, "{e:?}");

    let o = cli(
        &["replay-metrics", "--samples", "sim/samples.csv", "--truth", "sim/truth.csv", "--estimates", "est/estimates.csv", "--out", "rep"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("reference") && text.contains("estimated"), "{text}");
    assert!(tmp.path().join("rep/delta_f.csv").exists());
}

#[test]
fn exit_codes_follow_error_category() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| cli(args, tmp.path()).status.code().unwrap();

    std::fs::write(tmp.path().join("bad.toml"), "[scenario]\ngenerator = \"aggregated\"\nduration = 1.0\n").unwrap();
    assert_eq!(code(&["run-scenario", "--config", "bad.toml"]), 2);
    assert_eq!(code(&["run-scenario", "--no-such-flag"]), 2);
    assert_eq!(code(&["estimate", "missing.csv"]), 3);

    std::fs::write(tmp.path().join("bad.csv"), "t,f,p,q\n0,1,0,0\n").unwrap();
    let o = cli(&["estimate", "bad.csv"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("t,f_av,p_pfc_tot,p_e_pfc"));

    assert_eq!(code(&["run-scenario", "--preset", "nominal-outage", "--alpha=-1"]), 5);
    assert_eq!(code(&["run-scenario", "--preset", "nominal-outage", "--delay", "0.0005", "--dt", "0.001"]), 5);
}
