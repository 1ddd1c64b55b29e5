use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use esnnet::eval::EvalReport;

const TINY: &str = r#"
jobs = 1

[model]
channels = 4
samples = 50
filters = 2
kernel_len = 5

[esn]
size = 8
density = 0.5

[train]
max_epochs = 2
patience = 2
batch_size = 16
learning_rate = 0.01
seeds = [0, 1]

[preprocess]
window_samples = 50

[data.synth]
subjects = 2
per_class = 10
channels = 4
events_per_trial = 15
"#;

fn esnnet(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esnnet"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn synth_then_train_from_manifest() {
    let dir = setup();
    let d = dir.path();
    let stdout = ok(&esnnet(&["synth", "-c", "tiny.toml", "-o", "data"], d));
    assert!(stdout.trim().ends_with("manifest.json"));
    assert!(d.join("data/config.toml").exists());

    let stdout = ok(&esnnet(
        &["train", "-c", "tiny.toml", "-o", "run", "-q", "--set", "data.manifest=\"data/manifest.json\""],
        d,
    ));
    assert!(stdout.contains("Macro Average"));
    let report = EvalReport::from_json(&fs::read_to_string(d.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report.runs.len(), 4);
    for r in &report.runs {
        assert_eq!(r.metrics.total(), r.eval_size);
        let trace: usize = (0..3).map(|k| r.metrics.confusion[k][k]).sum();
        assert_eq!(r.metrics.accuracy, trace as f64 / r.eval_size as f64);
    }
    let config = fs::read_to_string(d.join("run/config.toml")).unwrap();
    assert!(config.contains("manifest = \"data/manifest.json\""));
    let run = d.join("run/runs/s01_seed0");
    assert!(run.join("model.ckpt").exists());
    let log = fs::read_to_string(run.join("epochs.jsonl")).unwrap();
    assert_eq!(log.lines().count(), report.runs[0].epochs_run);
    assert!(log.lines().next().unwrap().contains("\"wall_time_s\""));

    // the stored config reproduces the run on its own
    let again = ok(&esnnet(&["train", "-c", "run/config.toml", "-o", "run2", "-q"], d));
    assert_eq!(again, stdout);
    assert_eq!(
        fs::read(d.join("run/report.json")).unwrap(),
        fs::read(d.join("run2/report.json")).unwrap()
    );
}

#[test]
fn eval_and_report_commands() {
    let dir = setup();
    let d = dir.path();
    ok(&esnnet(&["train", "-c", "tiny.toml", "-o", "run", "-q"], d));
    let stdout = ok(&esnnet(
        &["eval", "-c", "tiny.toml", "-o", "ev", "--checkpoint", "run/runs/s02_seed1/model.ckpt", "--subject", "s02"],
        d,
    ));
    assert!(stdout.starts_with("accuracy"));
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ev/eval.json")).unwrap()).unwrap();
    assert_eq!(eval["result"]["eval_size"], 30);

    let text = ok(&esnnet(&["report", "run", "--out", "tables.txt"], d));
    let lines: Vec<&str> = text.lines().collect();
    let header = lines.iter().position(|l| l.starts_with("Subject")).unwrap();
    assert!(lines[header + 2].starts_with("s01"));
    assert!(lines[header + 3].starts_with("s02"));
    assert!(lines[header + 4].starts_with("Macro Average"));
    assert_eq!(fs::read_to_string(d.join("tables.txt")).unwrap(), text);
}

#[test]
fn loso_command() {
    let dir = setup();
    let d = dir.path();
    let stdout = ok(&esnnet(&["loso", "-c", "tiny.toml", "-o", "loso", "-q", "--set", "train.seeds=[3]"], d));
    assert!(stdout.contains("Held-out subject") && stdout.contains("Mean Accuracy"));
    let report = EvalReport::from_json(&fs::read_to_string(d.join("loso/report.json")).unwrap()).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert!(report.runs.iter().all(|r| r.eval_size == 30 && r.train_size + r.val_size == 30));
    assert!(fs::read_to_string(d.join("loso/config.toml")).unwrap().contains("protocol = \"loso\""));
}

#[test]
fn exit_codes_by_category() {
    let dir = setup();
    let d = dir.path();
    let out = esnnet(&["train", "-c", "tiny.toml", "--set", "esn.alpha=1.5"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("esn.leak_rate"));

    let out = esnnet(&["train", "-c", "tiny.toml", "--set", "esn.bogus=1"], d);
    assert_eq!(out.status.code(), Some(2));

    let out = esnnet(&["train", "-c", "tiny.toml", "--set", "data.manifest=\"missing/manifest.json\""], d);
    assert_eq!(out.status.code(), Some(3));

    fs::write(d.join("bad.ckpt"), b"not a checkpoint").unwrap();
    let out = esnnet(&["eval", "-c", "tiny.toml", "-o", "ev", "--checkpoint", "bad.ckpt"], d);
    assert_eq!(out.status.code(), Some(3));

    let out = esnnet(&["train", "-c", "tiny.toml", "-q", "--set", "train.learning_rate=1e300"], d);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    fs::write(d.join("blocker"), b"").unwrap();
    let out = esnnet(&["train", "-c", "tiny.toml", "-o", "blocker/run"], d);
    assert_eq!(out.status.code(), Some(5));
}
