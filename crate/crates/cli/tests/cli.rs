use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ndarray::Array2;
use pita_core::formats::{parse_groups, parse_predictions, parse_recipes, save_matrix, write_predictions, PredictionLine};
use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"{"pipeline.hidden": [32], "pipeline.epochs": 4, "retrieval.epochs": 2}"#;

fn pita(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pita")).args(args).output().expect("run pita")
}

fn ok(args: &[&str]) -> String {
    let out = pita(args);
    assert!(
        out.status.success(),
        "pita {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthesizes a small dataset and builds its groups under `tmp`.
fn fixture(tmp: &Path, recipes: &str, extra: &[&str]) {
    let data = tmp.join("data");
    let mut args = vec![
        "synth",
        "--ingredients",
        "20",
        "--groups",
        "4",
        "--recipes",
        recipes,
        "--seed",
        "3",
        "--out",
        p(&data),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    ok(&[
        "build-groups",
        "--vocab",
        p(&data.join("vocab.txt")),
        "--embeddings",
        p(&data.join("ingredient_embeddings.bin")),
        "--verdicts",
        p(&data.join("verdicts.tsv")),
        "--out",
        p(&tmp.join("groups")),
    ]);
    fs::write(tmp.join("config.json"), SMALL).unwrap();
}

fn train(tmp: &Path, stage: &str, extra: &[&str]) -> Output {
    let (config, data, groups, model) = (tmp.join("config.json"), tmp.join("data"), tmp.join("groups"), tmp.join("model"));
    let mut args = vec![
        "train",
        "--stage",
        stage,
        "--config",
        p(&config),
        "--data",
        p(&data),
        "--groups",
        p(&groups),
        "--out",
        p(&model),
    ];
    args.extend_from_slice(extra);
    pita(&args)
}

fn train_all(tmp: &Path) {
    for stage in ["retrieval", "id", "ap"] {
        let out = train(tmp, stage, &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

fn evaluate(tmp: &Path, extra: &[&str]) -> Value {
    let (report, data, groups) = (tmp.join("report.json"), tmp.join("data"), tmp.join("groups"));
    let mut args = vec![
        "evaluate",
        "--data",
        p(&data),
        "--groups",
        p(&groups),
        "--out",
        p(&report),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    serde_json::from_slice(&fs::read(report).unwrap()).unwrap()
}

fn group_sets(groups: Vec<Vec<usize>>) -> BTreeSet<BTreeSet<usize>> {
    groups.into_iter().map(|g| g.into_iter().collect()).collect()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn synth_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    for dir in ["a", "b"] {
        ok(&["synth", "--ingredients", "12", "--groups", "3", "--recipes", "50", "--seed", "9", "--out", p(&tmp.path().join(dir))]);
    }
    for entry in fs::read_dir(tmp.path().join("a")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(tmp.path().join("a").join(&name)).unwrap(),
            fs::read(tmp.path().join("b").join(&name)).unwrap(),
            "{name:?} differs"
        );
    }
}

#[test]
fn build_groups_recovers_planted_groups() {
    let tmp = TempDir::new().unwrap();
    fixture(tmp.path(), "400", &[]);
    let planted = parse_groups(&fs::read(tmp.path().join("data/planted_groups.json")).unwrap(), 20).unwrap();
    let built = parse_groups(&fs::read(tmp.path().join("groups/groups.json")).unwrap(), 20).unwrap();
    assert_eq!(group_sets(built), group_sets(planted));
}

#[test]
fn strict_threshold_gives_singletons() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--ingredients", "15", "--groups", "3", "--recipes", "30", "--out", p(&data)]);
    let stdout = ok(&[
        "build-groups",
        "--vocab",
        p(&data.join("vocab.txt")),
        "--embeddings",
        p(&data.join("ingredient_embeddings.bin")),
        "--verdicts",
        p(&data.join("verdicts.tsv")),
        "--threshold",
        "0.999",
        "--out",
        p(&tmp.path().join("groups")),
    ]);
    // synth verdicts never add pairs, so nothing is proposed and nothing joins
    let groups = parse_groups(&fs::read(tmp.path().join("groups/groups.json")).unwrap(), 15).unwrap();
    assert_eq!(groups.len(), 15);
    assert!(stdout.starts_with("groups: 15\n"), "{stdout}");
}

#[test]
fn missing_verdicts_file_is_reported() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--ingredients", "10", "--groups", "2", "--recipes", "20", "--out", p(&data)]);
    let missing = tmp.path().join("nowhere.tsv");
    let out = pita(&[
        "build-groups",
        "--vocab",
        p(&data.join("vocab.txt")),
        "--embeddings",
        p(&data.join("ingredient_embeddings.bin")),
        "--verdicts",
        p(&missing),
        "--out",
        p(&tmp.path().join("groups")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere.tsv"), "{}", stderr(&out));
}

#[test]
fn zero_norm_embedding_is_a_numeric_error() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--ingredients", "10", "--groups", "2", "--recipes", "20", "--out", p(&data)]);
    let zeros = tmp.path().join("zeros.bin");
    let mut m = pita_core::formats::load_matrix(data.join("ingredient_embeddings.bin")).unwrap();
    m.row_mut(4).fill(0.0);
    save_matrix(&zeros, &m).unwrap();
    let out = pita(&[
        "build-groups",
        "--vocab",
        p(&data.join("vocab.txt")),
        "--embeddings",
        p(&zeros),
        "--verdicts",
        p(&data.join("verdicts.tsv")),
        "--out",
        p(&tmp.path().join("groups")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("numeric"));
}

#[test]
fn ap_without_id_checkpoint_exits_4() {
    let tmp = TempDir::new().unwrap();
    fixture(tmp.path(), "400", &[]);
    assert!(train(tmp.path(), "retrieval", &[]).status.success());
    let out = train(tmp.path(), "ap", &[]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("id.ckpt"));
    assert!(!tmp.path().join("model/ap.ckpt").exists());

    // the ablation needs no detector
    let out = train(tmp.path(), "ap", &["--set", "pipeline.mode=no_id"]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn bad_override_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    fixture(tmp.path(), "400", &[]);
    let out = train(tmp.path(), "retrieval", &["--set", "pipeline.lr=-1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = train(tmp.path(), "retrieval", &["--set", "no.such.key=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    fixture(t, "1000", &["--noiseless"]);
    fs::write(
        t.join("config.json"),
        r#"{"pipeline.hidden": [64], "pipeline.epochs": 30, "pipeline.lr": 0.003, "retrieval.epochs": 5}"#,
    )
    .unwrap();
    train_all(t);

    // the id loss goes down
    let log = fs::read_to_string(t.join("model/id_log.jsonl")).unwrap();
    let losses: Vec<f64> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["loss"].as_f64().unwrap())
        .collect();
    assert!(losses.len() == 30 && losses.last() < losses.first(), "{losses:?}");

    // retraining AP leaves the detector untouched
    let id_before = fs::read(t.join("model/id.ckpt")).unwrap();
    assert!(train(t, "ap", &["--set", "pipeline.epochs=2"]).status.success());
    assert_eq!(fs::read(t.join("model/id.ckpt")).unwrap(), id_before);
    assert!(train(t, "ap", &[]).status.success());

    // predictions sum to the total
    let preds_path = t.join("preds.jsonl");
    ok(&[
        "predict",
        "--model-dir",
        p(&t.join("model")),
        "--embeddings",
        p(&t.join("data/embeddings.bin")),
        "--recipes",
        p(&t.join("data/test.jsonl")),
        "--out",
        p(&preds_path),
    ]);
    let preds = parse_predictions(&fs::read(&preds_path).unwrap(), 20).unwrap();
    assert!(!preds.is_empty());
    for line in &preds {
        let total: f64 = line.amounts.iter().map(|(_, g)| g).sum();
        assert!((total - 1000.0).abs() <= 1e-3, "{total}");
    }

    // scoring the written predictions gives the same report as the model
    let direct = evaluate(t, &["--model-dir", p(&t.join("model"))]);
    let via_file = evaluate(t, &["--predictions", p(&preds_path)]);
    for key in ["n", "cvg", "iou", "cvg_group", "iou_group"] {
        assert_eq!(direct[key], via_file[key], "{key}");
    }
    for key in ["emd", "emd_group"] {
        let (a, b) = (direct[key].as_f64().unwrap(), via_file[key].as_f64().unwrap());
        assert!((a - b).abs() <= 1e-6 * (1.0 + a), "{key}: {a} vs {b}");
    }
    // noiseless data is easy to cover
    assert!(direct["cvg"].as_f64().unwrap() >= 0.85, "{direct}");
}

#[test]
fn perfect_predictions_score_perfectly() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    fixture(t, "400", &[]);
    let records = parse_recipes(&fs::read(t.join("data/test.jsonl")).unwrap(), 20).unwrap();
    let lines: Vec<PredictionLine> = records
        .iter()
        .map(|r| PredictionLine {
            id: r.id.clone(),
            amounts: r.amounts(20, 1000.0).unwrap().nonzero(),
        })
        .collect();
    fs::write(t.join("truth.jsonl"), write_predictions(&lines)).unwrap();
    let report = evaluate(t, &["--predictions", p(&t.join("truth.jsonl"))]);
    assert_eq!(report["n"].as_u64().unwrap() as usize, records.len());
    for key in ["cvg", "iou", "cvg_group", "iou_group"] {
        assert_eq!(report[key].as_f64(), Some(1.0), "{key}");
    }
    for key in ["emd", "emd_group"] {
        assert!(report[key].as_f64().unwrap().abs() <= 1e-9, "{key}");
    }
}

#[test]
fn predict_rejects_wrong_width() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    fixture(t, "400", &[]);
    train_all(t);
    save_matrix(t.join("narrow.bin"), &Array2::zeros((3, 2))).unwrap();
    let out = pita(&[
        "predict",
        "--model-dir",
        p(&t.join("model")),
        "--embeddings",
        p(&t.join("narrow.bin")),
        "--out",
        p(&t.join("x.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}
