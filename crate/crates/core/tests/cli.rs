use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kws(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kws"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = kws(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn toy(dir: &Path, phrases: usize, per_phrase: usize, offset: usize) {
    ok(&[
        "toy-generate",
        "--phrases",
        &phrases.to_string(),
        "--per-phrase",
        &per_phrase.to_string(),
        "--phrase-offset",
        &offset.to_string(),
        "--seed",
        "5",
        "--out",
        p(dir),
    ]);
}

fn small_train_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("train.json");
    fs::write(
        &path,
        r#"{"model": {"hidden_dim": 8, "embedding_dim": 8, "num_layers": 1},
            "batch": {"num_phrases": 4, "utts_per_phrase": 4},
            "max_steps": 12, "eval_every": 6, "n_enroll": 4}"#,
    )
    .unwrap();
    path
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(kws(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(kws(&["interpolate", "--target"]).status.code(), Some(1));
    assert_eq!(kws(&["--help"]).status.code(), Some(0));
}

#[test]
fn featurize_writes_one_cache_per_utterance_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("toy");
    toy(&corpus, 20, 40, 0);
    let cache = dir.path().join("cache");
    let manifest = corpus.join("manifest.jsonl");
    let first = ok(&["featurize", "--manifest", p(&manifest), "--out", p(&cache)]);
    assert_eq!(first, "written,reused,failed\n800,0,0\n");
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 800);
    let second = ok(&["featurize", "--manifest", p(&manifest), "--out", p(&cache)]);
    assert_eq!(second, "written,reused,failed\n0,800,0\n");
}

#[test]
fn corrupt_wav_is_reported_and_others_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("toy");
    toy(&corpus, 2, 3, 0);
    let bad = corpus.join("wav/toy0001_002.wav");
    fs::write(&bad, b"RIFF junk").unwrap();
    let cache = dir.path().join("cache");
    let out = kws(&["featurize", "--manifest", p(&corpus.join("manifest.jsonl")), "--out", p(&cache)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("toy0001_002.wav"));
    assert_eq!(String::from_utf8_lossy(&out.stdout), "written,reused,failed\n5,0,1\n");
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 5);
}

#[test]
fn sample_and_mix_write_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    toy(&a, 5, 6, 0);
    toy(&b, 3, 4, 100);
    let sub = dir.path().join("sub");
    ok(&["sample", "--manifest", p(&a.join("manifest.jsonl")), "--phrases", "3", "--per-phrase", "4", "--out", p(&sub)]);
    let text = fs::read_to_string(sub.join("manifest.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 12);
    let few = dir.path().join("few");
    ok(&["sample", "--manifest", p(&a.join("manifest.jsonl")), "--count", "7", "--out", p(&few)]);
    assert_eq!(fs::read_to_string(few.join("manifest.jsonl")).unwrap().lines().count(), 7);
    let mixed = dir.path().join("mixed");
    ok(&["mix", "--real", p(&sub.join("manifest.jsonl")), "--tts", p(&b.join("manifest.jsonl")), "--out", p(&mixed)]);
    assert_eq!(fs::read_to_string(mixed.join("manifest.jsonl")).unwrap().lines().count(), 24);

    let out = kws(&["sample", "--manifest", p(&a.join("manifest.jsonl")), "--phrases", "9", "--per-phrase", "2", "--out", p(&sub)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_then_evaluate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train");
    let eval = dir.path().join("eval");
    toy(&train, 6, 8, 0);
    toy(&eval, 3, 8, 50);
    let cfg = small_train_config(dir.path());
    let run = dir.path().join("run");
    let stdout = ok(&[
        "train",
        "--config",
        p(&cfg),
        "--tts",
        p(&train.join("manifest.jsonl")),
        "--eval",
        p(&eval.join("manifest.jsonl")),
        "--single-thread",
        "--out",
        p(&run),
    ]);
    assert!(stdout.starts_with("steps,final_loss,eer_percent,auc_percent\n12,"));
    for f in ["config.json", "log.csv", "final.ckpt", "best.ckpt", "best.q8.ckpt", "eval/metrics.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(run.join("log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,loss,eer,auc"));
    assert_eq!(log.lines().count(), 13);

    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("ev{k}"));
        ok(&[
            "evaluate",
            "--checkpoint",
            p(&run.join("best.ckpt")),
            "--manifest",
            p(&eval.join("manifest.jsonl")),
            "--n-enroll",
            "4",
            "--seed",
            "3",
            "--single-thread",
            "--out",
            p(&out),
        ]);
        outputs.push(out);
    }
    for f in ["metrics.csv", "det_mean.csv", "histogram.csv", "det/toy0050.csv"] {
        assert_eq!(
            fs::read(outputs[0].join(f)).unwrap(),
            fs::read(outputs[1].join(f)).unwrap(),
            "{f}"
        );
    }
    let metrics = fs::read_to_string(outputs[0].join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3 + 1);
    let det = fs::read_to_string(outputs[0].join("det_mean.csv")).unwrap();
    assert_eq!(det.lines().next(), Some("threshold,far,frr"));
    assert_eq!(det.lines().count(), 102);
}

#[test]
fn single_phrase_aggregate_equals_the_phrase() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train");
    toy(&train, 4, 8, 0);
    let one = dir.path().join("one");
    toy(&one, 1, 12, 70);
    let cfg = small_train_config(dir.path());
    let run = dir.path().join("run");
    ok(&["train", "--config", p(&cfg), "--tts", p(&train.join("manifest.jsonl")), "--steps", "3", "--out", p(&run)]);
    let out = dir.path().join("ev");
    ok(&[
        "evaluate",
        "--checkpoint",
        p(&run.join("final.ckpt")),
        "--manifest",
        p(&one.join("manifest.jsonl")),
        "--n-enroll",
        "4",
        "--out",
        p(&out),
    ]);
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][0], "__mean__");
    assert_eq!(rows[0][1..3], rows[1][1..3]);
}

#[test]
fn too_few_utterances_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train");
    toy(&train, 4, 8, 0);
    let cfg = small_train_config(dir.path());
    let run = dir.path().join("run");
    ok(&["train", "--config", p(&cfg), "--tts", p(&train.join("manifest.jsonl")), "--steps", "2", "--out", p(&run)]);
    let out = kws(&[
        "evaluate",
        "--checkpoint",
        p(&run.join("final.ckpt")),
        "--manifest",
        p(&train.join("manifest.jsonl")),
        "--out",
        p(&dir.path().join("ev")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = kws(&[
        "evaluate",
        "--checkpoint",
        p(&train.join("manifest.jsonl")),
        "--manifest",
        p(&train.join("manifest.jsonl")),
        "--out",
        p(&dir.path().join("ev")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overflowing_inputs_are_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train");
    toy(&train, 4, 8, 0);
    let cfg = dir.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{"model": {"hidden_dim": 4, "embedding_dim": 4, "num_layers": 1, "input_scale": 1e38},
            "batch": {"num_phrases": 4, "utts_per_phrase": 4}, "max_steps": 2}"#,
    )
    .unwrap();
    let out = kws(&["train", "--config", p(&cfg), "--tts", p(&train.join("manifest.jsonl")), "--out", p(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

fn write_sweep_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn sweeps_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let tts = dir.path().join("tts");
    let real = dir.path().join("real");
    let eval = dir.path().join("eval");
    toy(&tts, 16, 10, 0);
    toy(&real, 6, 12, 200);
    toy(&eval, 3, 8, 500);
    let train = r#""train": {"model": {"hidden_dim": 8, "embedding_dim": 8, "num_layers": 1},
        "batch": {"num_phrases": 4, "utts_per_phrase": 4}, "max_steps": 6, "eval_every": 3, "n_enroll": 4}"#;

    let no_real = write_sweep_config(
        dir.path(),
        "no_real.json",
        &format!(
            r#"{{{train}, "tts_manifest": "{}", "eval_manifest": "{}",
               "n_phrases": [4, 16], "per_phrase": [10], "real_count": [0]}}"#,
            p(&tts.join("manifest.jsonl")),
            p(&eval.join("manifest.jsonl"))
        ),
    );
    let a = dir.path().join("sweep_a");
    let stdout = ok(&["sweep", "--config", p(&no_real), "--single-thread", "--out", p(&a)]);
    assert_eq!(stdout, "cells,failed\n2,0\n");
    let table = fs::read_to_string(a.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "n_phrases,per_phrase,real_count,eer_percent,auc_percent,status,run_dir");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("4,10,0,") && lines[2].starts_with("16,10,0,"));

    let low_real = write_sweep_config(
        dir.path(),
        "low_real.json",
        &format!(
            r#"{{{train}, "tts_manifest": "{}", "real_manifest": "{}", "eval_manifest": "{}",
               "n_phrases": [0, 4, 40], "per_phrase": [10], "real_count": [40]}}"#,
            p(&tts.join("manifest.jsonl")),
            p(&real.join("manifest.jsonl")),
            p(&eval.join("manifest.jsonl"))
        ),
    );
    let b = dir.path().join("sweep_b");
    let stdout = ok(&["sweep", "--config", p(&low_real), "--out", p(&b)]);
    assert_eq!(stdout, "cells,failed\n3,1\n");
    let table = fs::read_to_string(b.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[1].starts_with("0,0,40,") && lines[1].contains(",ok,"));
    assert!(lines[2].starts_with("4,10,40,") && lines[2].contains(",ok,"));
    assert!(lines[3].starts_with("40,10,40,,,\"error: need 40 phrases"), "{}", lines[3]);

    let rep = dir.path().join("report");
    let stdout = ok(&["report", p(&a.join("sweep.csv")), p(&b.join("sweep.csv")), "--out", p(&rep)]);
    assert!(stdout.starts_with("rows,det_points\n5,"));
    let merged = fs::read_to_string(rep.join("merged.csv")).unwrap();
    assert_eq!(merged.lines().count(), 1 + 5);
    assert!(merged.starts_with("source,n_phrases"));
    let trend = fs::read_to_string(rep.join("trend_real.csv")).unwrap();
    assert!(trend.starts_with("real_count,eer_percent,auc_percent"));
    let det = fs::read_to_string(rep.join("det_curves.csv")).unwrap();
    assert_eq!(det.lines().count(), 1 + 4 * 101);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 5);

    assert_eq!(kws(&["report", "--out", p(&rep)]).status.code(), Some(2));
}

#[test]
fn interpolate_reads_a_curve_csv() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("curve.csv");
    fs::write(&curve, "real_count,eer_percent,auc_percent\n500000,5.5,2.5\n1000000,4.2,1.8\n").unwrap();
    let out = ok(&["interpolate", "--curve", p(&curve), "--target", "5.0"]);
    assert_eq!(out, "target,real_count,exact\n5,692308,692307.692\n");
    let out = ok(&["interpolate", "--curve", p(&curve), "--metric", "auc", "--target", "2.5"]);
    assert!(out.contains(",500000,"));
    assert_eq!(kws(&["interpolate", "--curve", p(&curve), "--target", "1.0"]).status.code(), Some(2));
}
