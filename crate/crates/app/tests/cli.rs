use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lesionbench_core::data::{load_manifest, ImageRecord, Split};
use lesionbench_core::pipeline::PredictionBatch;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lesionbench"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[eval]\nk_values = [0]\n").unwrap();
    assert_eq!(run(&["stats", "--config", s(&bad)]).status.code(), Some(2));
    std::fs::write(&bad, "[train\n").unwrap();
    assert_eq!(run(&["stats", "--config", s(&bad)]).status.code(), Some(2));
    assert_eq!(run(&["stats"]).status.code(), Some(2), "missing manifest is a config error");

    let k_too_big = dir.path().join("k.toml");
    std::fs::write(&k_too_big, "[eval]\nk_values = [1, 5]\n").unwrap();
    let o = run(&[
        "report",
        "--config",
        s(&k_too_big),
        "--manifest",
        s(&fixture("report/manifest.jsonl")),
        "--predictions",
        s(&fixture("report/predictions-resnet50-like.jsonl")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_1() {
    let o = run(&["stats", "--manifest", "/nonexistent/manifest.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/manifest.jsonl"));
}

#[test]
fn report_on_perfect_log_prints_one_hundred() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = load_manifest(fixture("report/manifest.jsonl")).unwrap();
    let ids: Vec<String> = manifest.records.iter().map(|r| r.image_id.clone()).collect();
    let probs = manifest
        .records
        .iter()
        .map(|r| {
            let mut row = vec![0.0; 3];
            row[r.class_id] = 1.0;
            row
        })
        .collect();
    let log = dir.path().join("perfect.jsonl");
    PredictionBatch::new("oracle", ids, probs).unwrap().save(&log).unwrap();
    let o = run(&[
        "report",
        "--manifest",
        s(&fixture("report/manifest.jsonl")),
        "--predictions",
        s(&log),
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("overall top-1 100.00%"), "{}", stdout(&o));
    for f in ["report.json", "tables.txt", "confusion.png", "per_class.png", "confusion.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn report_files_are_reproducible() {
    let render = || {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&[
            "report",
            "--manifest",
            s(&fixture("report/manifest.jsonl")),
            "--predictions",
            s(&fixture("report/predictions-resnet50-like.jsonl")),
            s(&fixture("report/predictions-densenet121-like.jsonl")),
            "--out",
            s(dir.path()),
        ]);
        assert!(o.status.success());
        dir
    };
    let (a, b) = (render(), render());
    for f in ["report.json", "tables.txt", "confusion.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    for f in ["confusion.png", "per_class.png"] {
        let x = image::open(a.path().join(f)).unwrap().to_rgb8();
        let y = image::open(b.path().join(f)).unwrap().to_rgb8();
        assert_eq!(x.dimensions(), y.dimensions());
        assert!(x.pixels().eq(y.pixels()), "{f}");
    }
    let tables = std::fs::read_to_string(a.path().join("tables.txt")).unwrap();
    assert!(tables.lines().any(|l| l.starts_with("EnsembleNet")));
}

#[test]
fn ensemble_over_four_logs_lists_fifteen_subsets() {
    let dir = tempfile::tempdir().unwrap();
    let base = PredictionBatch::load(fixture("report/predictions-resnet50-like.jsonl")).unwrap();
    let mut logs = Vec::new();
    for m in 0..4 {
        let probs = base
            .probs
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = row.clone();
                if (i + m) % 4 == 0 {
                    r.rotate_left(1);
                }
                r
            })
            .collect();
        let path = dir.path().join(format!("m{m}.jsonl"));
        PredictionBatch::new(format!("m{m}"), base.sample_ids.clone(), probs).unwrap().save(&path).unwrap();
        logs.push(path);
    }
    let manifest = fixture("report/manifest.jsonl");
    let mut args = vec!["ensemble", "--manifest", s(&manifest), "--out", s(dir.path()), "--predictions"];
    args.extend(logs.iter().map(|p| s(p)));
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 15);
    let top1: Vec<f64> = rows.iter().map(|l| l.split_whitespace().nth(2).unwrap().parse().unwrap()).collect();
    assert!(top1.windows(2).all(|w| w[0] >= w[1]), "{out}");
    assert!(rows[0].trim_start().starts_with("1 "));
    let fused = PredictionBatch::load(dir.path().join("ensemble.jsonl")).unwrap();
    assert_eq!(fused.len(), base.len());
}

#[test]
fn synth_split_clean_train_predict_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = run(&["synth", "--num-classes", "3", "--per-class", "12", "--noise-fraction", "0.25", "--size", "32", "--seed", "3", "--out", s(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("36 images (9 noise)"));

    let cleaned = dir.path().join("cleaned");
    let o = run(&["clean", "--manifest", s(&data.join("manifest.jsonl")), "--out", s(&cleaned)]);
    assert!(o.status.success());
    let m = load_manifest(cleaned.join("manifest.jsonl")).unwrap();
    assert_eq!(m.len(), 27);
    assert!(m.records.iter().all(|r| r.path.is_absolute() && r.path.exists()));

    let split = dir.path().join("split");
    let o = run(&["split", "--manifest", s(&cleaned.join("manifest.jsonl")), "--seed", "1", "--out", s(&split)]);
    assert!(o.status.success());
    let m = load_manifest(split.join("manifest.jsonl")).unwrap();
    assert!(m.records.iter().all(|r| r.split != Split::Unassigned));

    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nsize = 16\nepochs = 2\nbatch_size = 8\n[eval]\nk_values = [1, 2]\n").unwrap();
    let work = dir.path().join("work");
    let manifest = split.join("manifest.jsonl");
    let o = run(&["train", "--config", s(&cfg), "--manifest", s(&manifest), "--out", s(&work)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch")).count(), 2);

    let o = run(&["predict", "--config", s(&cfg), "--manifest", s(&manifest), "--out", s(&work)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = work.join("predictions-small-cnn.jsonl");
    let preds = PredictionBatch::load(&log).unwrap();
    assert_eq!(preds.len(), m.records_in(Split::Test).count());

    let o = run(&["report", "--config", s(&cfg), "--manifest", s(&manifest), "--predictions", s(&log), "--out", s(&work)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Top-2"));
}

#[test]
fn detect_eval_with_oracle_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(run(&["synth", "--num-classes", "4", "--per-class", "5", "--size", "48", "--out", s(&data)]).status.success());
    let manifest = load_manifest(data.join("manifest.jsonl")).unwrap();
    let records: Vec<ImageRecord> = manifest
        .records
        .iter()
        .map(|r| ImageRecord { split: Split::Test, ..r.clone() })
        .collect();
    manifest.with_records(records).save(data.join("manifest.jsonl")).unwrap();

    let o = run(&["detect-eval", "--manifest", s(&data.join("manifest.jsonl")), "--detector", "oracle", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("overall 100.00%"), "{}", stdout(&o));
    let log = std::fs::read_to_string(dir.path().join("detections.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 20);

    let o = run(&["detect-eval", "--manifest", s(&data.join("manifest.jsonl")), "--detector", "missing", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}
