use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn jointie(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jointie"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = jointie(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Writes a small synthetic corpus and returns its path.
fn corpus(dir: &Path, name: &str, seed: u64, size: usize) -> PathBuf {
    let path = dir.join(name);
    ok(&[
        "gen-synthetic",
        "--output",
        p(&path),
        "--seed",
        &seed.to_string(),
        "--size",
        &size.to_string(),
        "--fields",
        "2",
        "--min-length",
        "20",
        "--max-length",
        "40",
    ]);
    path
}

const TINY: &str = r#"
epochs = 2
batch_size = 2
learning_rate = 0.01
window_length = 16
stride = 8

[encoder]
embed_dim = 8
num_layers = 1
num_heads = 2
feedforward_dim = 16
"#;

fn train(dir: &Path, data: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.join(out);
    let mut args = vec!["train", "--config", p(&cfg), "--train", p(data), "--output", p(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn train_predict_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), "train.json", 1, 4);
    let before = std::fs::read(&data).unwrap();
    let run = train(dir.path(), &data, "run", &[]);
    for f in ["metrics.jsonl", "best.ckpt", "final.ckpt", "manifest.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "L", "L_span", "L_NER", "alpha", "epoch_seconds"] {
        assert!(first.get(key).is_some(), "{key} missing from log");
    }
    let manifest = read_json(&run.join("manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let preds = dir.path().join("preds.json");
    let ckpt = run.join("final.ckpt");
    ok(&["predict", "--checkpoint", p(&ckpt), "--data", p(&data), "--output", p(&preds)]);
    let again = dir.path().join("again.json");
    ok(&["predict", "--checkpoint", p(&ckpt), "--data", p(&data), "--output", p(&again), "--workers", "2"]);
    assert_eq!(std::fs::read(&preds).unwrap(), std::fs::read(&again).unwrap());
    let parsed = read_json(&preds);
    assert_eq!(parsed.as_array().unwrap().len(), 4);
    assert!(parsed[0]["fields"].as_object().unwrap().len() == 2);
    assert!(dir.path().join("preds.json.manifest.json").exists());

    let report = dir.path().join("report.json");
    let out = ok(&["eval", "--data", p(&data), "--predictions", p(&preds), "--output", p(&report)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("micro"));
    let report = read_json(&report);
    let f1 = report["squad_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    assert_eq!(std::fs::read(&data).unwrap(), before);
}

#[test]
fn same_seed_gives_same_checkpoint_and_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), "train.json", 2, 3);
    let a = train(dir.path(), &data, "a", &["--seed", "5"]);
    let b = train(dir.path(), &data, "b", &["--seed", "5"]);
    assert_eq!(std::fs::read(a.join("final.ckpt")).unwrap(), std::fs::read(b.join("final.ckpt")).unwrap());
    let strip = |run: &Path| {
        std::fs::read_to_string(run.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("epoch_seconds");
                v
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn pairwise_model_trains_and_predicts() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), "train.json", 3, 3);
    let run = train(dir.path(), &data, "pair", &["--model", "pairwise", "--epochs", "1"]);
    let preds = dir.path().join("preds.json");
    ok(&["predict", "--checkpoint", p(&run.join("final.ckpt")), "--data", p(&data), "--output", p(&preds)]);
    let manifest = read_json(&dir.path().join("preds.json.manifest.json"));
    assert_eq!(manifest["config"]["model"], "pairwise");
    assert_eq!(read_json(&preds).as_array().unwrap().len(), 3);
}

#[test]
fn empty_dataset_gives_empty_prediction_list() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), "train.json", 4, 2);
    let run = train(dir.path(), &data, "run", &["--epochs", "1"]);
    let empty = dir.path().join("empty.json");
    let mut ds = read_json(&data);
    ds["examples"] = Value::Array(Vec::new());
    std::fs::write(&empty, ds.to_string()).unwrap();
    let preds = dir.path().join("preds.json");
    ok(&["predict", "--checkpoint", p(&run.join("final.ckpt")), "--data", p(&empty), "--output", p(&preds)]);
    assert_eq!(std::fs::read_to_string(&preds).unwrap(), "[]\n");
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), "train.json", 5, 2);

    let missing = dir.path().join("nope.json");
    let out = dir.path().join("out");
    let r = jointie(&["train", "--train", p(&missing), "--output", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());

    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "epochz = 3\n").unwrap();
    let r = jointie(&["train", "--config", p(&bad_cfg), "--train", p(&data), "--output", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("epochz"));

    let mut ds = read_json(&data);
    ds["examples"][0]["annotations"] = serde_json::json!([{ "field": ds["schema"]["fields"][0]["name"], "spans": [[0, 999]] }]);
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, ds.to_string()).unwrap();
    let r = jointie(&["ingest", p(&broken), "--validate"]);
    assert_eq!(r.status.code(), Some(3));

    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let r = jointie(&[
        "train",
        "--config",
        p(&cfg),
        "--train",
        p(&data),
        "--output",
        p(&out),
        "--learning-rate",
        "1e300",
    ]);
    assert_eq!(r.status.code(), Some(4), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("batch"));
}

#[test]
fn bench_writes_one_row_per_model_and_phase() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    std::fs::write(
        &cfg,
        r#"
embed_dim = 8
num_layers = 1
num_heads = 2
feedforward_dim = 16

[corpus]
min_length = 40
max_length = 80

[training]
window_length = 16
stride = 8
"#,
    )
    .unwrap();
    let csv = dir.path().join("bench.csv");
    ok(&["bench", "--config", p(&cfg), "--output", p(&csv), "--documents", "2", "--fields", "3"]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("model,phase,documents,m,seconds,encoder_calls"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let calls = |model: &str| -> u64 {
        rows.iter()
            .find(|r| r[0] == model && r[1] == "inference")
            .unwrap()[5]
            .parse()
            .unwrap()
    };
    assert_eq!(calls("pairwise"), 3 * calls("joint"));
}

#[test]
fn ingest_reports_stats_and_normalizes() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), "train.json", 6, 3);
    let norm = dir.path().join("norm.json");
    let out = ok(&["ingest", p(&data), "--validate", "--output", p(&norm)]);
    let stats: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["documents"], 3);
    assert_eq!(std::fs::read(&norm).unwrap(), std::fs::read(&data).unwrap());
}
