use std::path::Path;
use std::process::{Command, Output};

const TINY_DYNAMICS: &str = r#"{
  "experiment": "dynamics",
  "world": {"m": 6, "n": 24, "d": 3},
  "graph": {"kind": "uniform", "list_size": 6},
  "train": {"k": 3, "max_epochs": 20, "patience": 5},
  "rounds": 2,
  "repetitions": 2,
  "max_trainings": 3,
  "grids": {"targets": [0.5]},
  "methods": ["baseline", "strategic", "hybrid@1", "mmr", "random", "nonstrategic"]
}"#;

fn perfrec(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_perfrec"));
    cmd.args(args).env_remove("PERFREC_JOBS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

fn run_dynamics(dir: &Path, out: &str, envs: &[(&str, &str)]) -> Vec<u8> {
    let cfg = write(dir, "dyn.json", TINY_DYNAMICS);
    let out = dir.join(out);
    let o = perfrec(&["dynamics", "--config", &cfg, "--out", out.to_str().unwrap()], envs);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::read(out.join("dynamics.csv")).unwrap()
}

#[test]
fn verify_passes_and_writes_schema() {
    let dir = tempfile::tempdir().unwrap();
    let o = perfrec(&["verify", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("PASS prop1_exact")));
    assert!(!stdout.contains("FAIL"));
    let csv = std::fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert!(csv.starts_with("#schema=verify/v1\ncheck,value,threshold,pass\n"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"experiment": "dynamics", "rounds": 0}"#);
    let o = perfrec(&["dynamics", "--config", &bad], &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("rounds"));

    let unknown = write(dir.path(), "unknown.json", r#"{"experiment": "dynamics", "roundz": 3}"#);
    let o = perfrec(&["dynamics", "--config", &unknown], &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("roundz"));

    let wrong = write(dir.path(), "wrong.json", r#"{"experiment": "pareto"}"#);
    assert_eq!(code(&perfrec(&["synth", "--config", &wrong], &[])), 2);
    assert_eq!(code(&perfrec(&["dynamics"], &[])), 2);
    assert_eq!(code(&perfrec(&["verify"], &[("PERFREC_JOBS", "zero")])), 2);
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&perfrec(&["plot", "--input", missing.to_str().unwrap()], &[])), 1);
}

#[test]
fn dynamics_output_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_dynamics(dir.path(), "a", &[]);
    let b = run_dynamics(dir.path(), "b", &[]);
    let c = run_dynamics(dir.path(), "c", &[("PERFREC_JOBS", "1")]);
    assert_eq!(a, b);
    assert_eq!(a, c);
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("#schema=dynamics/v1"));
    assert_eq!(
        lines.next(),
        Some("method,alpha,target,lambda,seed,round,ndcg_test,div_pre,div_post")
    );
    assert_eq!(lines.count(), 6 * 2 * 2);
    let echoed = std::fs::read_to_string(dir.path().join("a/dynamics.config.json")).unwrap();
    assert!(echoed.contains("\"max_trainings\": 3"));
}

#[test]
fn seed_flag_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "dyn.json", TINY_DYNAMICS);
    let out = dir.path().join("s");
    let o = perfrec(&["dynamics", "--config", &cfg, "--seed", "77", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0);
    let seeded = std::fs::read_to_string(out.join("dynamics.csv")).unwrap();
    assert!(seeded.lines().nth(2).unwrap().contains(",77,"));
    assert_ne!(seeded.into_bytes(), run_dynamics(dir.path(), "d", &[]));
}

#[test]
fn plot_draws_one_series_per_curve() {
    let dir = tempfile::tempdir().unwrap();
    run_dynamics(dir.path(), "p", &[]);
    let csv = dir.path().join("p/dynamics.csv");
    let svg = dir.path().join("fig.svg");
    let o = perfrec(&["plot", "--input", csv.to_str().unwrap(), "--out", svg.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0);
    let body = std::fs::read_to_string(&svg).unwrap();
    assert!(body.starts_with("<svg"));
    // six methods, two panels
    assert_eq!(body.matches("class=\"series\"").count(), 12);
}

#[test]
fn plot_rejects_empty_and_unknown_tables() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.csv", "#schema=pareto/v1\nlambda,seed,round,ndcg,div\n");
    assert_ne!(code(&perfrec(&["plot", "--input", &empty], &[])), 0);
    let odd = write(dir.path(), "odd.csv", "a,b\n1,2\n");
    let o = perfrec(&["plot", "--input", &odd], &[]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambda"));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            perfrec::cli::config::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 6);
}
