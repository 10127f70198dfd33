use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_evadv");

const TINY: &str = r#"
seed = 3

[dataset]
events = 32
train_per_class = 6
val_per_class = 2
test_per_class = 4

[victim]
epochs = 10

[attack]
iterations = 5
binary_steps = 2

[campaign]
max_samples = 2
ablations = ["no-diffusion"]
"#;

fn run<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> i32 {
    run(args).status.code().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code::<&str>(&[]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["--seed", "abc", "gen-data"]), 1);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[attack]\nitertions = 3\n").unwrap();
    assert_eq!(code(&["--config", bad.to_str().unwrap(), "gen-data"]), 1);
    assert_eq!(code(&["--config", "/nonexistent/run.toml", "gen-data"]), 1);
    assert_eq!(code(&["--jobs", "0", "gen-data"]), 1);
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    let out = out.to_str().unwrap();
    let r = run(&["--out", out, "attack"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("manifest.json"));
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    let base = ["--config", cfg.as_str(), "--out", o, "--jobs", "1"];
    let with = |cmd: &[&'static str]| -> Vec<String> { base.iter().chain(cmd).map(|s| s.to_string()).collect() };

    assert_eq!(code(&with(&["gen-data"])), 0);
    assert_eq!(code(&with(&["train-victim"])), 0);
    let attack = run(&with(&["attack"]));
    assert_eq!(attack.status.code(), Some(0), "{}", String::from_utf8_lossy(&attack.stderr));
    let stdout = String::from_utf8(attack.stdout).unwrap();
    assert!(stdout.starts_with("method,ablation,sr,chamfer,l2,hausdorff,n_samples,seed"));
    assert_eq!(code(&with(&["defend"])), 0);

    for f in [
        "resolved_config.toml",
        "data/manifest.json",
        "victim/params.bin",
        "victim/params.json",
        "victim/metrics.json",
        "attack/attack.csv",
        "attack/report.json",
        "attack/ma-adv/full/sample_0000.json",
        "attack/ma-adv/no-diffusion/sample_0000.json",
        "defend/defend.csv",
        "defend/report.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let csv = fs::read_to_string(out.join("attack/attack.csv")).unwrap();
    let methods: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["fgsm", "ifgsm", "cw", "ma-adv", "ma-adv"]);
    let defend = fs::read_to_string(out.join("defend/defend.csv")).unwrap();
    assert_eq!(defend.lines().count(), 1 + 5 * 3);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("victim/metrics.json")).unwrap()).unwrap();
    assert!(metrics["train_accuracy"].is_number() && metrics["val_accuracy"].is_number());

    let merged = dir.path().join("merged");
    let m = merged.to_str().unwrap();
    assert_eq!(code(&["report", o, o, "--to", m]), 0);
    let rows = fs::read_to_string(merged.join("merged_attack.csv")).unwrap();
    assert!(rows.starts_with("run,method,"));
    assert_eq!(rows.lines().count(), 1 + 2 * 5);
    assert!(merged.join("plot_data/run").is_dir());
}

#[test]
fn ablation_flags_change_the_tag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    for cmd in ["gen-data", "train-victim"] {
        assert_eq!(code(&["--config", &cfg, "--out", o, cmd]), 0);
    }
    let r = run(&["--config", &cfg, "--out", o, "attack", "--no-causal", "--no-adaptive-lr"]);
    assert_eq!(r.status.code(), Some(0));
    let stdout = String::from_utf8(r.stdout).unwrap();
    assert!(stdout.contains("ma-adv,no-causal+no-adaptive-lr,"), "{stdout}");
    let resolved = fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("causal = false"));
}
