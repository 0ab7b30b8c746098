use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--set", "corpus.n_dialogues=30",
    "--set", "policy.hidden_dim=8",
    "--set", "policy.pretrain.epochs=2",
    "--set", "reward.train.epochs=5",
    "--set", "ppo.trajectories_per_batch=8",
    "--set", "ppo.outer_epochs=2",
    "--set", "eval.n_dialogues=10",
    "--set", "eval.seeds=[1]",
    "--set", "eval.benchmark_seeds=[1]",
];

fn cli(sub: &str, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crs-rlhf"))
        .arg(sub)
        .args(["--out", out.to_str().unwrap(), "--run-id", "r", "--seed", "3"])
        .args(TINY)
        .args(extra)
        .env("CRS_RLHF_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

const PIPELINE: [&str; 6] = ["gen-corpus", "pretrain", "train-reward", "train-ppo", "evaluate", "report"];

#[test]
fn staged_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    for s in PIPELINE {
        let printed = ok(&cli(s, dir.path(), &[]));
        for line in printed.lines() {
            assert!(Path::new(line).exists(), "{s} printed missing path {line}");
        }
    }
    let run = dir.path().join("r");
    for f in [
        "config.json",
        "manifest.json",
        "corpus.jsonl",
        "checkpoints/policy_pretrained.json",
        "checkpoints/reward.json",
        "checkpoints/policy_tuned.json",
        "reports/eval.json",
        "reports/table1.txt",
        "reports/figures.csv",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let table = std::fs::read_to_string(run.join("reports/table1.txt")).unwrap();
    assert!(table.contains("RLHF (PPO)"));
    let csv = std::fs::read_to_string(run.join("reports/figures.csv")).unwrap();
    assert!(csv.starts_with("series,x,y,seed"));
}

#[test]
fn stage_without_inputs_fails_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    for s in ["report", "pretrain", "evaluate"] {
        let o = cli(s, dir.path(), &[]);
        assert!(!o.status.success());
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn reruns_give_identical_checksums() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        for s in PIPELINE {
            ok(&cli(s, d, &[]));
        }
    }
    let manifest = |d: &Path| -> serde_json::Value {
        let mut m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(d.join("r/manifest.json")).unwrap()).unwrap();
        m["stages"].take()
    };
    // the stage entries hold sha256 of every input and output
    assert_eq!(manifest(a.path()), manifest(b.path()));
    for f in ["corpus.jsonl", "checkpoints/policy_tuned.json", "reports/eval.json"] {
        assert_eq!(
            std::fs::read(a.path().join("r").join(f)).unwrap(),
            std::fs::read(b.path().join("r").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn show_config_round_trips_through_config_flag() {
    let dir = tempfile::tempdir().unwrap();
    let first = ok(&cli("show-config", dir.path(), &["--preset", "paper", "--set", "ppo.clip_epsilon=0.1"]));
    let path = dir.path().join("echo.json");
    std::fs::write(&path, &first).unwrap();
    let second = ok(&Command::new(env!("CARGO_BIN_EXE_crs-rlhf"))
        .args(["show-config", "--config", path.to_str().unwrap()])
        .output()
        .unwrap());
    assert_eq!(first, second);
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["ppo"]["learning_rate"], 5e-6);
    assert_eq!(v["ppo"]["clip_epsilon"], 0.1);
}

#[test]
fn invalid_override_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli("show-config", dir.path(), &["--set", "ppo.clip_epsilon=-0.2"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("ppo.clip_epsilon"));
    let o = cli("show-config", dir.path(), &["--set", "ppo.nonsense=1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonsense"));
}

#[test]
fn changed_config_refuses_existing_run() {
    let dir = tempfile::tempdir().unwrap();
    ok(&cli("gen-corpus", dir.path(), &[]));
    let o = cli("pretrain", dir.path(), &["--set", "policy.hidden_dim=9"]);
    assert!(!o.status.success());
}
