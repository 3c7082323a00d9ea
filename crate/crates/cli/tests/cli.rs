use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn picox(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_picox"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = picox(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn trained(dir: &Path) {
    ok(
        dir,
        &[
            "synth",
            "--sentences",
            "30",
            "--seed",
            "4",
            "--out",
            "corpus.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "train",
            "--corpus",
            "corpus.jsonl",
            "--out",
            "models",
            "--optimizer",
            "adam",
            "--lr",
            "0.05",
            "--epochs",
            "80",
            "--dim",
            "128",
        ],
    );
}

#[test]
fn train_predict_evaluate_round_trip() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    trained(dir);
    for f in [
        "localizer.json",
        "spanclass.json",
        "embedder.json",
        "training_log.json",
    ] {
        assert!(dir.join("models").join(f).exists(), "{f} missing");
    }
    ok(
        dir,
        &[
            "predict",
            "--corpus",
            "corpus.jsonl",
            "--models",
            "models",
            "--out",
            "preds.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "evaluate",
            "--pred",
            "preds.jsonl",
            "--gold",
            "corpus.jsonl",
            "--group",
            "overlap",
            "--out",
            "report.json",
            "--csv",
            "report.csv",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert!(report["micro"]["f1"].as_f64().unwrap() > 0.9);
    assert!(report["groups"].as_array().is_some_and(|g| !g.is_empty()));
    let csv = fs::read_to_string(dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("group,category,tp,fp,fn,precision,recall,f1\n"));
}

#[test]
fn sweep_writes_one_row_per_threshold() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    trained(dir);
    ok(
        dir,
        &[
            "sweep",
            "--corpus",
            "corpus.jsonl",
            "--models",
            "models",
            "--thresholds",
            "0.2,0.3,0.5",
            "--out",
            "curve.csv",
        ],
    );
    let text = fs::read_to_string(dir.join("curve.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "threshold,candidates,precision,recall,f1");
    assert_eq!(lines.len(), 4);
}

#[test]
fn warm_start_from_saved_models() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    trained(dir);
    ok(
        dir,
        &[
            "train",
            "--corpus",
            "corpus.jsonl",
            "--out",
            "again",
            "--init-from",
            "models",
            "--epochs",
            "1",
            "--optimizer",
            "adam",
            "--lr",
            "0.001",
        ],
    );
    // The embedder is inherited from the warm-start source, not the defaults.
    assert_eq!(
        fs::read_to_string(dir.join("again/embedder.json")).unwrap(),
        fs::read_to_string(dir.join("models/embedder.json")).unwrap()
    );
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    trained(dir);
    fs::write(dir.join("cfg.json"), r#"{"threshold": 0.9}"#).unwrap();
    let bad = picox(
        dir,
        &[
            "predict",
            "--corpus",
            "corpus.jsonl",
            "--models",
            "models",
            "--out",
            "p.jsonl",
            "--config",
            "cfg.json",
        ],
    );
    assert_eq!(bad.status.code(), Some(1));
    ok(
        dir,
        &[
            "predict",
            "--corpus",
            "corpus.jsonl",
            "--models",
            "models",
            "--out",
            "p.jsonl",
            "--config",
            "cfg.json",
            "--threshold",
            "0.3",
        ],
    );
}

#[test]
fn augment_dump_uses_none_category() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "synth",
            "--kind",
            "distractor",
            "--sentences",
            "10",
            "--out",
            "c.jsonl",
        ],
    );
    ok(
        dir,
        &["augment", "--corpus", "c.jsonl", "--out", "negs.jsonl"],
    );
    let text = fs::read_to_string(dir.join("negs.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 10);
    let mut seen = 0;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for span in v["spans"].as_array().unwrap() {
            assert_eq!(span["category"], "NONE");
            seen += 1;
        }
    }
    assert!(seen > 0);
}

#[test]
fn iob2_round_trip_and_overlap_rejection() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "synth",
            "--kind",
            "distractor",
            "--sentences",
            "12",
            "--out",
            "flat.jsonl",
        ],
    );
    ok(
        dir,
        &["export-iob2", "--input", "flat.jsonl", "--out", "flat.iob"],
    );
    ok(
        dir,
        &["import-iob2", "--input", "flat.iob", "--out", "back.jsonl"],
    );
    assert_eq!(
        fs::read_to_string(dir.join("flat.jsonl")).unwrap(),
        fs::read_to_string(dir.join("back.jsonl")).unwrap()
    );

    ok(
        dir,
        &[
            "synth",
            "--kind",
            "nested",
            "--sentences",
            "5",
            "--out",
            "nested.jsonl",
        ],
    );
    let out = picox(
        dir,
        &["export-iob2", "--input", "nested.jsonl", "--out", "x.iob"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();

    let missing = picox(
        dir,
        &["augment", "--corpus", "absent.jsonl", "--out", "n.jsonl"],
    );
    assert_eq!(missing.status.code(), Some(2));

    fs::write(dir.join("bad.jsonl"), "{not json}\n").unwrap();
    let malformed = picox(
        dir,
        &["augment", "--corpus", "bad.jsonl", "--out", "n.jsonl"],
    );
    assert_eq!(malformed.status.code(), Some(1));

    let usage = picox(dir, &["predict", "--corpus"]);
    assert_eq!(usage.status.code(), Some(1));

    ok(dir, &["synth", "--sentences", "5", "--out", "c.jsonl"]);
    let no_models = picox(
        dir,
        &[
            "predict", "--corpus", "c.jsonl", "--models", "nowhere", "--out", "p.jsonl",
        ],
    );
    assert_eq!(no_models.status.code(), Some(2));

    fs::write(dir.join("preds.jsonl"), r#"{"uid":"zzz","spans":[]}"#).unwrap();
    let unknown = picox(
        dir,
        &["evaluate", "--pred", "preds.jsonl", "--gold", "c.jsonl"],
    );
    assert_eq!(unknown.status.code(), Some(1));
}

#[test]
fn significance_reports_identical_runs() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--sentences", "10", "--out", "c.jsonl"]);
    let empty: String = (0..10)
        .map(|i| format!("{{\"uid\":\"s{i}\",\"spans\":[]}}\n"))
        .collect();
    fs::write(dir.join("p.jsonl"), empty).unwrap();
    let out = ok(
        dir,
        &[
            "significance",
            "--a",
            "p.jsonl",
            "--b",
            "p.jsonl",
            "--gold",
            "c.jsonl",
        ],
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["p_value"], 1.0);
    assert_eq!(v["n"], 2);
}
