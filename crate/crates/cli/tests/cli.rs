//! End-to-end runs of the `unetcd` binary on tiny inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use unet_cd::synthdata::{load_png, normalize, read_manifest, Class};
use unet_cd::trainer::load_checkpoint;

fn unetcd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unetcd"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = unetcd(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A small dataset and a briefly trained model inside `dir`.
fn fixture(dir: &Path, count: usize) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    ok(&["synth", "--count", &count.to_string(), "--out", p(&data)]);
    let model = dir.join("m.uncd");
    ok(&[
        "--deterministic", "train", "--data", p(&data), "--epochs", "2", "--base-channels", "4", "--out", p(&model),
    ]);
    (data, model)
}

#[test]
fn synth_writes_scenes_pairs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["synth", "--count", "20", "--size", "64", "--seed", "3", "--out", p(&a)]);
    ok(&["synth", "--count", "20", "--size", "64", "--seed", "3", "--out", p(&b)]);

    let scenes: Vec<_> = fs::read_dir(a.join("scenes")).unwrap().collect();
    assert_eq!(scenes.len(), 40);
    let records = read_manifest(a.join("manifest.tsv")).unwrap();
    assert_eq!(records.iter().filter(|r| r.pair_id.is_none()).count(), 20);
    for f in ["0.05", "0.1", "0.15"] {
        let n = records
            .iter()
            .filter(|r| r.change_mask.is_some() && r.pair_id.as_deref().unwrap().ends_with(&format!(":{f}:0")))
            .count();
        assert_eq!(n, 20, "fraction {f}");
    }
    for v in ["10", "20", "40"] {
        let n = records
            .iter()
            .filter(|r| r.change_mask.is_some() && r.pair_id.as_deref().unwrap().ends_with(&format!(":0.05:{v}")))
            .count();
        assert_eq!(n, 20, "variance {v}");
    }
    for r in &records {
        let rel = r.image.strip_prefix(&a).unwrap();
        assert_eq!(fs::read(&r.image).unwrap(), fs::read(b.join(rel)).unwrap());
    }
    assert_eq!(fs::read(a.join("manifest.tsv")).unwrap(), fs::read(b.join("manifest.tsv")).unwrap());
}

#[test]
fn train_records_defaults_and_writes_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--count", "4", "--no-pairs", "--out", p(&data)]);
    let model = dir.path().join("m.uncd");
    let stdout = ok(&["train", "--data", p(&data), "--base-channels", "2", "--out", p(&model)]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("epoch")).count(), 20);

    let run = json(&dir.path().join("m.run.json"));
    assert_eq!(run["command"], "train");
    assert_eq!(run["config"]["lr"].as_f64(), Some(0.0002));
    assert_eq!(run["config"]["batch"], 4);
    assert_eq!(run["config"]["epochs"], 20);
    assert_eq!(run["resolved"]["optimizer"]["learning_rate"].as_f64(), Some(0.0002));
    let ckpt = load_checkpoint(&model).unwrap();
    assert_eq!(ckpt.history.len(), 20);
    assert!(load_checkpoint(dir.path().join("m.best.uncd")).is_ok());
}

#[test]
fn usage_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let out = unetcd(&["train", "--data", p(&missing), "--out", p(&dir.path().join("m.uncd"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
    assert_eq!(unetcd(&["detect"]).status.code(), Some(2));
}

#[test]
fn io_and_validation_errors_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.uncd");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let img = dir.path().join("x.png");
    fs::write(&img, b"").unwrap();
    let out = unetcd(&["segment", "--checkpoint", p(&bad), "--image", p(&img), "--out", p(&dir.path().join("o.png"))]);
    assert_eq!(out.status.code(), Some(4));

    let (_, model) = fixture(dir.path(), 2);
    let out = unetcd(&["segment", "--checkpoint", p(&model), "--image", p(&img), "--out", p(&dir.path().join("o.png"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn segment_renders_quantized_probabilities_and_classes() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = fixture(dir.path(), 3);
    let image = data.join("scenes/s0001.png");
    let out = dir.path().join("seg.png");
    ok(&["segment", "--checkpoint", p(&model), "--image", p(&image), "--out", p(&out)]);

    let rendered = load_png(&out).unwrap();
    assert_eq!((rendered.width(), rendered.height()), (128, 64));
    let m = load_checkpoint(&model).unwrap().model;
    let probs = m.segment(&normalize(&load_png(&image).unwrap(), &m.norm).unwrap()).unwrap();
    let q = |c: Class, x: usize, y: usize| (255.0 * probs.data()[c.index() * 4096 + y * 64 + x]).round() as u8;
    for y in 0..64 {
        for x in 0..64 {
            let px = rendered.get(x, y);
            assert_eq!(px, [q(Class::Background, x, y), q(Class::Immutable, x, y), q(Class::Building, x, y)]);
            let cls = rendered.get(64 + x, y);
            assert!(Class::from_color(cls).is_some(), "{cls:?}");
        }
    }
}

#[test]
fn detect_identical_images_and_records_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = fixture(dir.path(), 2);
    let image = data.join("scenes/s0000.png");
    let out = dir.path().join("det");
    ok(&["detect", "--checkpoint", p(&model), "--before", p(&image), "--after", p(&image), "--out", p(&out)]);

    let report = json(&out.join("report.json"));
    assert!(report["changed_fraction"].as_f64().unwrap() <= 0.01);
    let fractions = report["di_nonzero_fraction"].as_array().unwrap();
    assert_eq!(fractions.len(), 5);
    assert!(fractions.iter().all(|f| f.as_f64() == Some(0.0)));
    let run = json(&out.join("run.json"));
    let thetas: Vec<f64> = run["config"]["thresholds"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(thetas, [0.4, 0.6, 0.8, 1.0, 1.2]);
    let mask = load_png(out.join("change_mask.png")).unwrap();
    assert_eq!((mask.width(), mask.height()), (64, 64));
}

#[test]
fn eval_reports_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = fixture(dir.path(), 3);
    let report_path = dir.path().join("eval.json");
    ok(&["eval", "--checkpoint", p(&model), "--pairs", p(&data.join("manifest.tsv")), "--out", p(&report_path)]);
    let report = json(&report_path);
    let cells = report["cells"].as_array().unwrap();
    let keys: Vec<(f64, f64)> = cells
        .iter()
        .map(|c| (c["fraction"].as_f64().unwrap(), c["variance"].as_f64().unwrap()))
        .collect();
    assert_eq!(keys, [(0.05, 0.0), (0.1, 0.0), (0.15, 0.0), (0.05, 10.0), (0.05, 20.0), (0.05, 40.0)]);
    assert!(cells.iter().all(|c| c["pairs"] == 3));
    assert_eq!(report["pairs"].as_array().unwrap().len(), 18);

    let empty = dir.path().join("empty.tsv");
    fs::write(&empty, "# nothing\n").unwrap();
    let out = unetcd(&["eval", "--checkpoint", p(&model), "--pairs", p(&empty), "--out", p(&report_path)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_loose_and_fails_tight() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("gc.json");
    let stdout = ok(&["gradcheck", "--tolerance", "1e-2", "--out", p(&report)]);
    assert!(stdout.contains("PASS"));
    let r = json(&report);
    assert!(r["worst"]["param"].is_string());
    assert!(r["per_kind"].as_object().unwrap().len() == 8);

    let out = unetcd(&["gradcheck", "--tolerance", "1e-9", "--samples", "3"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("worst:"));
}

#[test]
fn rerun_reproduces_deterministic_training() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = fixture(dir.path(), 3);
    let first = fs::read(&model).unwrap();
    fs::remove_file(&model).unwrap();
    ok(&["rerun", p(&dir.path().join("m.run.json"))]);
    assert_eq!(fs::read(&model).unwrap(), first);
}
