use std::path::Path;
use std::process::{Command, Output};

fn urbe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urbe")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn error_record(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not a JSON record ({e}): {stderr}"))
}

#[test]
fn urbe_simple_writes_outputs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let res = urbe(&[
        "urbe-simple",
        "--seed",
        "5",
        "--out",
        &out,
        "--override",
        "simple.episodes=40",
        "--override",
        "num_seeds=2",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(summary["final_mean_accumulated"].as_array().unwrap().len(), 3);
    for f in ["aggregate.csv", "summary.json", "urbe_seed5.csv", "ube_seed6.csv", "robust_seed5.jsonl"] {
        assert!(Path::new(&out).join(f).is_file(), "missing {f}");
    }
    let csv = std::fs::read_to_string(Path::new(&out).join("urbe_seed5.csv")).unwrap();
    assert!(csv.starts_with("# schema: "));
    assert!(csv.contains("# seed: 5"));
}

#[test]
fn config_file_is_read_and_unknown_keys_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "env = \"simple\"\nnum_seeds = 1\n[simple]\nepisodes = 10\nepisode = 3\n").unwrap();
    let res = urbe(&["urbe-simple", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let err = error_record(&res);
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("simple"));
}

#[test]
fn invalid_override_is_a_usage_error() {
    let res = urbe(&["urbe-simple", "--override", "simple.episodes"]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(error_record(&res)["error"]["kind"], "usage");
}

#[test]
fn unknown_subcommand_exits_with_usage_code() {
    let res = urbe(&["fly"]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(error_record(&res)["error"]["kind"], "usage");
}

#[test]
fn heatmap_on_tabular_env_is_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    let res = urbe(&["heatmap", "--out", dir.path().to_str().unwrap(), "--override", "env=\"simple\""]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(error_record(&res)["error"]["kind"], "unsupported");
}

#[test]
fn missing_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing-here");
    let res = urbe(&["eval-sweep", "--out", dir.path().to_str().unwrap(), "--checkpoint", missing.to_str().unwrap()]);
    assert!(!res.status.success());
    let kind = error_record(&res)["error"]["kind"].as_str().unwrap().to_string();
    assert!(["checkpoint", "io"].contains(&kind.as_str()), "{kind}");
}

#[test]
fn help_exits_cleanly() {
    let res = urbe(&["--help"]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("urbe-simple"));
}
