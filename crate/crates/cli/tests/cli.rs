use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn hjhom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjhom")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(path: &Path, v: &Value) -> String {
    fs::write(path, serde_json::to_string(v).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn g_config() -> Value {
    json!({ "nonlinearity": { "family": "power-plus-linear", "parameters": { "gamma": 2.0, "c": 1.0 } } })
}

/// a = 0 everywhere, V = (1 + sin 2 pi x) / 2, beta = 1.
fn inviscid_env(dir: &Path) -> String {
    let out = dir.join("env.csv");
    let o = hjhom(&[
        "env-gen", "--env-kind", "sinusoidal", "--param", "v_mean=0.5", "--param", "v_amp=0.5",
        "--kappa", "4", "--beta", "1", "--domain", "0", "1", "--dx", "0.01", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.to_str().unwrap().to_string()
}

#[test]
fn env_hill_finds_a_witness_on_a_degenerate_sample() {
    let dir = tempfile::tempdir().unwrap();
    let env = inviscid_env(dir.path());
    let witness = dir.path().join("witness.json");
    let o = hjhom(&["env-hill", "--env", &env, "--h", "0.99", "--y", "10", "--out", witness.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let w: Value = serde_json::from_str(&fs::read_to_string(witness).unwrap()).unwrap();
    assert_eq!(w["satisfied"], true);
    assert!(w["witness"]["achieved_integral"].as_f64().unwrap() >= 10.0);
}

#[test]
fn env_hill_reports_a_missing_hill_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("flat.csv");
    let o = hjhom(&[
        "env-gen", "--env-kind", "constant", "--param", "a0=0.5", "--param", "v0=0.5", "--kappa", "1",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let witness = dir.path().join("w.json");
    let o = hjhom(&["env-hill", "--env", out.to_str().unwrap(), "--h", "0.9", "--y", "1", "--out", witness.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let w: Value = serde_json::from_str(&fs::read_to_string(witness).unwrap()).unwrap();
    assert_eq!(w["satisfied"], false);
}

#[test]
fn corrector_below_beta_names_the_empty_interval() {
    let dir = tempfile::tempdir().unwrap();
    let env = inviscid_env(dir.path());
    let g = write(&dir.path().join("g.json"), &g_config());
    let out = dir.path().join("p.csv");
    let o = hjhom(&["corrector-solve", "--config", &g, "--env", &env, "--lambda", "0.5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("branch interval is empty"), "{}", stderr(&o));
    assert!(!out.exists());

    let o = hjhom(&[
        "corrector-solve", "--config", &g, "--env", &env, "--lambda", "2", "--branch", "plus", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.exists() && dir.path().join("p.json").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&hjhom(&["no-such-command"])), 2);
    assert_eq!(code(&hjhom(&["env-hill", "--h", "0.5"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let env = inviscid_env(dir.path());
    let g = write(&dir.path().join("g.json"), &g_config());
    let o = hjhom(&[
        "corrector-solve", "--config", &g, "--env", &env, "--lambda", "2", "--branch", "sideways", "--out", "x.csv",
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = hjhom(&["g-validate", "--config", &g, "--set", "nonlinearity.family=42"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn g_validate_flags_a_non_quasiconvex_table() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(&dir.path().join("g.json"), &g_config());
    assert_eq!(code(&hjhom(&["g-validate", "--config", &good])), 0);
    // Two wells: G is not quasiconvex.
    let p: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.25).collect();
    let gv: Vec<f64> = p.iter().map(|&x| (x * x - 1.0f64).powi(2).min(x * x + 8.0)).collect();
    let bad = write(
        &dir.path().join("bad.json"),
        &json!({ "nonlinearity": {
            "family": "tabulated", "parameters": { "p": p, "g": gv },
            "alpha0": 0.5, "alpha1": 20.0, "gamma": 2.0
        } }),
    );
    let report = dir.path().join("r.json");
    let o = hjhom(&["g-validate", "--config", &bad, "--out", report.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let r: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r["quasiconvex"]["quasiconvex"], false);
}

#[test]
fn pde_curve_and_glue_subcommands_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let env = inviscid_env(dir.path());
    let mut cfg = g_config();
    cfg["lambdas"] = json!([1.0, 1.5, 2.0]);
    let c = write(&dir.path().join("c.json"), &cfg);
    let curve = dir.path().join("curve.csv");
    let o = hjhom(&["effective-curve", "--config", &c, "--env", &env, "--out", curve.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(curve.exists() && dir.path().join("curve.json").exists());

    let trace = dir.path().join("trace.csv");
    let o = hjhom(&[
        "pde-run", "--config", &c, "--env", &env, "--theta", "-0.2", "--set", "scheme.t_final=2",
        "--out", trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let side: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
    assert!(side["extra"]["slope"]["fitted"].is_number());

    let glue = dir.path().join("glue.json");
    let o = hjhom(&["glue-check", "--config", &c, "--env", &env, "--out", glue.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let gl: Value = serde_json::from_str(&fs::read_to_string(glue).unwrap()).unwrap();
    assert_eq!(gl["glue"]["kind"], "pinned-crossing");
}

#[test]
fn run_then_compare_reflects_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "env": { "kind": "sinusoidal", "a_sqrt_mean": 0.5, "v_mean": 0.5, "v_amp": 0.5, "kappa": 4.0 },
        "seeds": [1],
        "domain": [0.0, 1.0],
        "dx": 0.02,
        "nonlinearity": { "family": "power-plus-linear", "parameters": { "gamma": 2.0, "c": 1.0 } },
        "beta": 0.0,
        "lambdas": [0.0, 0.5, 1.0, 1.5, 2.0],
        "thetas": [-0.5, 0.5],
        "scheme": { "dx": 0.02, "t_final": 2.0 },
        "output_dir": "unused",
        "threads": 1
    });
    let c = write(&dir.path().join("exp.json"), &cfg);
    let out = dir.path().join("run");
    let o = hjhom(&["run", "--config", &c, "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = hjhom(&["compare", "--dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("compare.json").exists());
    // An impossible tolerance flips the verdict.
    let o = hjhom(&["compare", "--dir", out.to_str().unwrap(), "--tol", "0"]);
    assert_eq!(code(&o), 1);
    let o = hjhom(&["compare", "--dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}
