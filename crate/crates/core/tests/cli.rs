use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bayescomp::harness::io::{read_chain_file, read_coreset_csv};

const MINIMAL: &str = r#"
name = "smoke"
seed = 42

[model]
kind = "standard_normal"
dim = 2

[engine]
kind = "sample"
steps = 1000
burn_in = 100
chains = 2

[engine.kernel]
type = "hmc"
eps = 0.25
n_leapfrog = 8
"#;

fn bayescomp(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bayescomp"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn minimal_sample_run_reports_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "min.toml", MINIMAL);
    let out = dir.path().join("out");
    let o = bayescomp(&["sample"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let status: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(status["status"], "ok");

    let r = report(&out);
    assert_eq!(r["chains"].as_array().unwrap().len(), 2);
    for c in r["chains"].as_array().unwrap() {
        for key in ["ess", "lag1_autocorrelation", "acceptance_rate", "divergences"] {
            assert!(c[key].is_number(), "missing {key}");
        }
    }
    assert!(r["aggregate"]["r_hat"].as_f64().unwrap() < 1.1);
    let chain = read_chain_file(out.join("chain_0.jsonl")).unwrap();
    assert_eq!(chain.len(), 1000);
    assert_eq!(chain[0].x.len(), 2);
}

#[test]
fn replay_is_byte_identical_and_seed_override_changes_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "min.toml", MINIMAL);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(bayescomp(&["sample"], &cfg, &a).status.success());
    assert!(bayescomp(&["sample"], &cfg, &b).status.success());
    assert!(bayescomp(&["sample", "--seed", "43"], &cfg, &c).status.success());
    for f in ["chain_0.jsonl", "chain_1.jsonl", "draws_0.csv", "draws_1.csv"] {
        let fa = fs::read(a.join(f)).unwrap();
        assert_eq!(fa, fs::read(b.join(f)).unwrap(), "{f}");
        assert_ne!(fa, fs::read(c.join(f)).unwrap(), "{f}");
    }
    assert_eq!(report(&c)["seed"], 43);
}

#[test]
fn invalid_config_exits_nonzero_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &MINIMAL.replace("steps = 1000", "steps = 1000\ncolour = 3"));
    let out = dir.path().join("out");
    let o = bayescomp(&["sample"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["status"], "error");
    assert_eq!(err["kind"], "config");
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn engine_must_match_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "min.toml", MINIMAL);
    let out = dir.path().join("out");
    let o = bayescomp(&["vb"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn diagnose_reads_existing_chains() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "min.toml", MINIMAL);
    let out = dir.path().join("out");
    assert!(bayescomp(&["sample"], &cfg, &out).status.success());
    let diag = dir.path().join("diag");
    let o = Command::new(env!("CARGO_BIN_EXE_bayescomp"))
        .arg("diagnose")
        .arg("--chains")
        .arg(out.join("chain_0.jsonl"))
        .arg(out.join("chain_1.jsonl"))
        .arg("--out")
        .arg(&diag)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = report(&out);
    let d = report(&diag);
    assert_eq!(a["chains"], d["chains"]);
    assert_eq!(a["aggregate"]["r_hat"], d["aggregate"]["r_hat"]);
}

#[test]
fn coreset_file_carries_header_and_support() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "coreset.toml",
        r#"
seed = 9

[model]
kind = "gaussian_location"
data = { source = "gaussian", n = 60, mean = [1.0], sd = 2.0, seed = 1 }

[engine]
kind = "coreset"
method = "optimized"
budget = 6
n_draws = 300
n_opt_steps = 10
"#,
    );
    let out = dir.path().join("out");
    let o = bayescomp(&["coreset"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("coreset.csv")).unwrap();
    assert!(text.starts_with("# N=60 M=6 model_hash="));
    let file = read_coreset_csv(text.as_bytes()).unwrap();
    assert_eq!(file.n, 60);
    assert!(file.weights.size() <= 6);
    assert!(file.weights.weights().iter().all(|w| *w >= 0.0));
    let kl: Vec<f64> = fs::read_to_string(out.join("kl_trace.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').last().unwrap().parse().unwrap())
        .collect();
    assert_eq!(kl.len(), 10);
}

#[test]
fn vb_run_writes_fitted_state_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "vb.toml",
        r#"
seed = 2

[model]
kind = "linear_regression"
data = { source = "polynomial", n = 100, coefficients = [0.5, 1.5], noise_sd = 1.0, x_min = -2.0, x_max = 2.0, seed = 4 }
noise_var = 1.0
prior_var = 1.0
degree = 1

[engine]
kind = "vb"
method = "cavi"
"#,
    );
    let out = dir.path().join("out");
    let o = bayescomp(&["vb"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let state = fs::read_to_string(out.join("fitted_state.csv")).unwrap();
    assert!(state.starts_with("factor,family,eta1,eta2"));
    assert_eq!(state.lines().count(), 3);
    let trace: Vec<f64> = fs::read_to_string(out.join("elbo_trace.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').last().unwrap().parse().unwrap())
        .collect();
    assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-10));
}
