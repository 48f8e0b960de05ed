use std::path::Path;
use std::process::{Command, Output};

fn ctcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctcl"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_config(dir: &Path, learning_rate: f64) -> String {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        format!(
            r#"
seed = 2
loss_mode = "contrastive_center"
layer_dims = [2, 8, 2, 3]
output_dir = "out"

[sgd]
learning_rate = {learning_rate}
momentum = 0.0
weight_decay = 0.0
epochs = 3
batch_size = 16

[dataset.synthetic]
k = 3
d = 2
n_per_class = 30
test_n_per_class = 10
mean_radius = 3.0
cluster_std = 0.5
seed = 4
"#
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&ctcl(&["--help"])), 0);
    assert_eq!(code(&ctcl(&["frobnicate"])), 1);
    assert_eq!(code(&ctcl(&["train"])), 1);
}

#[test]
fn gradcheck_passes_and_validates_sizes() {
    let out = ctcl(&["gradcheck", "--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["checks"].as_array().unwrap().len(), 7);
    assert_eq!(code(&ctcl(&["gradcheck", "--m", "33"])), 1);
}

#[test]
fn train_eval_export_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.01);
    let out = ctcl(&["train", "--config", &cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("out");
    for f in [
        "metrics.jsonl",
        "timing.jsonl",
        "checkpoint.bin",
        "config.toml",
        "run.json",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ck = run.join("checkpoint.bin");
    let ck = ck.to_str().unwrap();

    let eval = ctcl(&["eval", "--config", &cfg, "--checkpoint", ck]);
    assert_eq!(code(&eval), 0);
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    let last_line = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(last_line.lines().last().unwrap()).unwrap();
    assert_eq!(report, last["test"]);

    let emb = dir.path().join("emb.csv");
    let emb = emb.to_str().unwrap();
    let export = ctcl(&[
        "export-embeddings",
        "--config",
        &cfg,
        "--checkpoint",
        ck,
        "--out",
        emb,
    ]);
    assert_eq!(
        code(&export),
        0,
        "{}",
        String::from_utf8_lossy(&export.stderr)
    );
    let csv = std::fs::read_to_string(emb).unwrap();
    assert_eq!(csv.lines().count(), 31);
    assert!(dir.path().join("emb.centers.csv").exists());

    let svg = dir.path().join("emb.svg");
    let plot = ctcl(&["plot", "--embeddings", emb, "--out", svg.to_str().unwrap()]);
    assert_eq!(code(&plot), 0, "{}", String::from_utf8_lossy(&plot.stderr));
    let svg = std::fs::read_to_string(svg).unwrap();
    assert_eq!(svg.matches(r#"class="point""#).count(), 30);
    assert_eq!(svg.matches(r#"class="center""#).count(), 3);
}

#[test]
fn missing_inputs_exit_one() {
    assert_eq!(
        code(&ctcl(&["train", "--config", "/nonexistent/run.toml"])),
        1
    );
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.01);
    let out = ctcl(&[
        "eval",
        "--config",
        &cfg,
        "--checkpoint",
        "/nonexistent/ck.bin",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1e6);
    let out = ctcl(&["train", "--config", &cfg]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite loss at epoch"));
}
