//! End-to-end runs of the `prca` binary on a tiny generated benchmark.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn prca(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prca"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to launch prca")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = prca(dir, args);
    assert!(
        out.status.success(),
        "prca {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"
embed_dim = 8
hidden_dim = 16
attn_dim = 16
max_output_len = 16
batch_size = 4
extract_learning_rate = 0.01
learning_rate = 0.001
critic_learning_rate = 0.001
extract_epochs = 2
reward_epochs = 1
corpus = "data/corpus.jsonl"
train = "data/train.jsonl"
test = "data/test.jsonl"
index = "out/index.bm25"
output_dir = "out"
"#;

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.toml"), CONFIG).unwrap();
    let msg = ok(dir, &["gen-toy", "--out", "data", "--train", "12", "--test", "6", "--distractors", "3"]);
    assert!(msg.contains("12 train and 6 test"), "{msg}");

    ok(dir, &["-c", "run.toml", "build-index"]);
    assert!(fs::read_to_string(dir.join("out/index.bm25")).unwrap().starts_with("PRCA-IDX-1"));

    ok(dir, &["-c", "run.toml", "train-extract"]);
    // 12 questions in batches of 4, two epochs.
    let losses = fs::read_to_string(dir.join("out/extract_loss.jsonl")).unwrap();
    assert_eq!(losses.lines().count(), 6);
    assert!(dir.join("out/extract.ckpt").exists());

    ok(dir, &["-c", "run.toml", "train-reward"]);
    let log = fs::read_to_string(dir.join("out/reward_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(dir.join("out/reward.ckpt").exists());

    ok(dir, &["-c", "run.toml", "evaluate"]);
    ok(dir, &["-c", "run.toml", "evaluate", "--no-adapter", "--k", "2"]);
    let without: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/eval_without.json")).unwrap()).unwrap();
    assert_eq!(without["k"], 2);
    assert_eq!(without["with_adapter"], false);
    let with: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/eval_with.json")).unwrap()).unwrap();
    assert_eq!(with["records"].as_array().unwrap().len(), 6);

    let stdout = ok(dir, &["-c", "run.toml", "sweep-topk", "--ks", "1,3"]);
    let csv = fs::read_to_string(dir.join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(stdout.starts_with(csv.lines().next().unwrap()));
}

#[test]
fn overrides_are_applied_and_checked() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.toml"), CONFIG).unwrap();
    ok(dir, &["gen-toy", "--out", "data", "--train", "8", "--test", "2", "--distractors", "2"]);
    ok(dir, &["-c", "run.toml", "--set", "output_dir=elsewhere", "--set", "extract_epochs=0", "train-extract"]);
    assert!(dir.join("elsewhere/extract.ckpt").exists());
    assert!(!dir.join("out").exists());

    let out = prca(dir, &["-c", "run.toml", "--set", "no_such_key=1", "build-index"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let out = prca(dir, &["-c", "run.toml", "--set", "batch_size=3", "train-extract"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));
}

#[test]
fn gen_toy_refuses_config_flags() {
    let tmp = TempDir::new().unwrap();
    let out = prca(tmp.path(), &["--set", "seed=1", "gen-toy", "--out", "data"]);
    assert!(!out.status.success());
}

#[test]
fn missing_checkpoint_is_reported() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.toml"), CONFIG).unwrap();
    ok(dir, &["gen-toy", "--out", "data", "--train", "8", "--test", "2", "--distractors", "2"]);
    let out = prca(dir, &["-c", "run.toml", "evaluate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("reward.ckpt"));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    for name in ["configs/default.toml", "configs/toy.toml"] {
        let out = prca(&root, &["-c", name, "--set", "corpus=/nonexistent/corpus.jsonl", "build-index"]);
        let err = String::from_utf8_lossy(&out.stderr);
        // Parsing succeeded if the failure is about the corpus file.
        assert!(err.contains("/nonexistent/corpus.jsonl"), "{name}: {err}");
    }
}
