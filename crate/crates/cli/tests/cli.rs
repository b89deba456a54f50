use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_patchformer"));
    c.env_remove("PATCHFORMER_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn");
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).expect("json line")).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["synth", "--out", p(&out)];
    args.extend_from_slice(extra);
    run(&args);
    out
}

#[test]
fn synth_defaults_and_seed_replay() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.seg", &["--seed", "7"]);
    let b = synth(dir.path(), "b.seg", &["--seed", "7"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ds = patchformer::data::load_segments(&a).unwrap();
    assert_eq!(ds.len(), 6 * 2 * 40);
    assert_eq!(ds.class_counts(), [240, 240]);
    let m: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a.seg.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 7);
    assert!(m["wall_clock_s"].is_number());
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.seg", &["--seed", "3"]);
    let b = dir.path().join("b.seg");
    let out = bin().args(["synth", "--out", p(&b)]).env("PATCHFORMER_SEED", "3").output().unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn null_dataset_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth(dir.path(), "n.seg", &["--amplitude", "0", "--subjects", "2", "--per-class", "4"]);
    let ds = patchformer::data::load_segments(&f).unwrap();
    assert_eq!(ds.generator_metadata["null"], true);
}

#[test]
fn preprocess_windows_task_periods() {
    let dir = tempfile::tempdir().unwrap();
    // 2 subjects x 2 periods of 24 s at 500 Hz.
    let raw = synth(
        dir.path(),
        "raw.seg",
        &["--subjects", "2", "--per-class", "1", "--channels", "2", "--length", "12000", "--fs", "500"],
    );
    let out = dir.path().join("w.seg");
    let o = run(&["preprocess", "--input", p(&raw), "--out", p(&out)]);
    let ds = patchformer::data::load_segments(&out).unwrap();
    assert_eq!((ds.f_s, ds.l), (250, 1000));
    // 20 s kept, 4 s windows at 50% overlap: 9 per period.
    assert_eq!(ds.len(), 4 * 9);
    assert_eq!(json_lines(&o).last().unwrap()["n"], 36);

    let no_ov = dir.path().join("n.seg");
    run(&["preprocess", "--input", p(&raw), "--out", p(&no_ov), "--overlap", "0"]);
    assert_eq!(patchformer::data::load_segments(&no_ov).unwrap().len(), 4 * 5);
}

#[test]
fn preprocess_reads_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let mut text = String::from("Fz,Cz\n");
    for i in 0..40 {
        text.push_str(&format!("{},{}\n", i, -i));
    }
    std::fs::write(&csv, text).unwrap();
    let out = dir.path().join("c.seg");
    let spec = format!("{}:S09:1", p(&csv));
    run(&[
        "preprocess",
        "--csv",
        &spec,
        "--csv-fs",
        "4",
        "--target-fs",
        "2",
        "--win",
        "4",
        "--keep",
        "20",
        "--out",
        p(&out),
    ]);
    let ds = patchformer::data::load_segments(&out).unwrap();
    assert_eq!(ds.channel_names, ["Fz", "Cz"]);
    assert_eq!(ds.subjects(), ["S09"]);
    assert_eq!(ds.l, 8);
    assert!(ds.y.iter().all(|&y| y == 1));
    assert_eq!(&ds.segment(0)[..2], &[0.5, 2.5]);
}

#[test]
fn bad_magic_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.seg");
    std::fs::write(&bad, b"NOTASEGFILE-----").unwrap();
    let o = dir.path().join("o.seg");
    let out = bin().args(["preprocess", "--input", p(&bad), "--out", p(&o)]).output().unwrap();
    assert!(!out.status.success());
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["error"], "format");
    assert!(err["message"].as_str().unwrap().contains("offset"));
}

#[test]
fn print_config_is_canonical() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.seg", &["--subjects", "2", "--per-class", "4"]);
    let o = dir.path().join("o");
    let args = ["loso", "--data", p(&data), "--out-dir", p(&o), "--preset", "toy", "--print-config"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let v: Value = serde_json::from_str(text.trim()).unwrap();
    assert_eq!(patchformer::codec::canonical_json(&v).unwrap(), text.trim());
    assert_eq!(v["model"]["temporal_kernel_len"], 16);
    assert_eq!(v["train"]["epochs"], 200);
    assert!(!dir.path().join("o").exists());
}

#[test]
fn loso_writes_one_row_per_subject_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.seg", &["--subjects", "2", "--per-class", "8"]);
    let out = dir.path().join("run");
    let o = run(&[
        "loso",
        "--data",
        p(&data),
        "--out-dir",
        p(&out),
        "--preset",
        "toy",
        "--epochs",
        "2",
        "--batch-size",
        "8",
    ]);
    let lines = json_lines(&o);
    let epochs: Vec<_> = lines.iter().filter(|v| v["event"] == "epoch").collect();
    assert_eq!(epochs.len(), 2 * 2);
    for e in &epochs {
        for k in ["label", "subject", "epoch", "lr", "train_loss", "train_acc", "val_acc"] {
            assert!(e.get(k).is_some(), "missing {k}");
        }
    }
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "subject,ACC (%),AUC,F1-macro (%)");
    assert!(rows[1].starts_with("S01,") && rows[2].starts_with("S02,"));
    assert!(rows[3].starts_with("mean±std,"));
    assert_eq!(rows.len(), 4);

    let again = dir.path().join("replay");
    run(&["replay", "--manifest", p(&out.join("manifest.json")), "--out-dir", p(&again)]);
    for f in ["report.csv", "report.json"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.seg", &["--subjects", "2", "--per-class", "8"]);
    let out = dir.path().join("t");
    run(&[
        "train",
        "--data",
        p(&data),
        "--out-dir",
        p(&out),
        "--preset",
        "toy",
        "--epochs",
        "2",
        "--test-subject",
        "S02",
    ]);
    for f in ["model.ckpt", "history.json", "test_metrics.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let o = run(&["eval", "--checkpoint", p(&out.join("model.ckpt")), "--data", p(&data), "--subject", "S02"]);
    let lines = json_lines(&o);
    let m = &lines.last().unwrap()["metrics"];
    let t: Value = serde_json::from_slice(&std::fs::read(out.join("test_metrics.json")).unwrap()).unwrap();
    assert_eq!(m, &t);
    assert_eq!(m["n"], 16);
}

#[test]
fn sweep_defaults_to_five_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.seg", &["--subjects", "2", "--per-class", "2", "--length", "512", "--fs", "128"]);
    let out = dir.path().join("s");
    let o = run(&["sweep", "--data", p(&data), "--out-dir", p(&out), "--preset", "toy_long", "--epochs", "1"]);
    let done: Vec<_> = json_lines(&o).into_iter().filter(|v| v["event"] == "done").collect();
    let labels: Vec<_> = done.iter().map(|v| v["label"].as_str().unwrap().to_string()).collect();
    assert_eq!(labels, ["10", "20", "30", "40", "50"]);
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);
}

#[test]
fn ablate_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.seg", &["--subjects", "2", "--per-class", "4"]);
    let out = dir.path().join("a");
    run(&["ablate", "--data", p(&data), "--out-dir", p(&out), "--preset", "toy", "--epochs", "1"]);
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    for v in ["no_fem", "no_spm", "no_overlap"] {
        assert!(table.contains(v));
        assert!(out.join(format!("{v}.json")).exists());
    }
}

#[test]
fn gradcheck_passes() {
    let o = run(&["gradcheck", "--trials", "3"]);
    let lines = json_lines(&o);
    let done = lines.last().unwrap();
    assert!(done["max_rel_error"].as_f64().unwrap() < 1e-5);
    assert!(lines.iter().any(|v| v["op"] == "full_model"));
}
