//! Runs the `mcsm` binary end to end on small configurations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcsm::format::{read_features, write_features, FeatureMatrix};
use mcsm::manifest::load_manifest;

fn mcsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcsm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A tiny synthetic run: 3 categories, 4-wide features, 10 SGD steps.
fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "seed": 5,
        "synthetic": {
            "categories": 3, "train_pairs": 4, "val_pairs": 1, "test_pairs": 3,
            "region_dim": 4, "word_dim": 4, "global_dim": 6, "max_words": 8
        },
        "model": { "hidden_dim": 4 },
        "train": { "triplets_per_step": 4, "max_iterations": 10 }
    });
    let path = dir.join("tiny.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap().iter().map(str::to_owned).collect())
        .collect()
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_owned(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_writes_the_requested_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "seed": 1,
        "synthetic": { "categories": 10, "train_pairs": 40, "val_pairs": 10, "test_pairs": 10 }
    });
    let cfg_path = dir.path().join("c.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let a = dir.path().join("a");
    let o = mcsm(&["synth", "--config", s(&cfg_path), "--out", s(&a)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = load_manifest(&a.join("manifest.json")).unwrap();
    let count = |m: &str| manifest.records.iter().filter(|r| r.modality == m).count();
    assert_eq!((count("image"), count("text")), (600, 600));
    assert_eq!(std::fs::read_dir(a.join("features")).unwrap().count(), 2400);

    // Same seed: byte-identical data. The resolved config records the output path.
    let b = dir.path().join("b");
    assert_eq!(code(&mcsm(&["synth", "--config", s(&cfg_path), "--out", s(&b)])), 0);
    let data = |d: &Path| {
        let mut t = tree_bytes(d);
        t.retain(|(p, _)| p != Path::new("config.resolved.json"));
        t
    };
    assert_eq!(data(&a), data(&b));

    // Different seed: same manifest, different features.
    let c = dir.path().join("c");
    assert_eq!(code(&mcsm(&["synth", "--config", s(&cfg_path), "--seed", "2", "--out", s(&c)])), 0);
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(c.join("manifest.json")).unwrap());
    let first = Path::new("features/000000.seq.mcsf");
    assert_ne!(std::fs::read(a.join(first)).unwrap(), std::fs::read(c.join(first)).unwrap());

    // A non-empty output directory needs --force.
    let o = mcsm(&["synth", "--config", s(&cfg_path), "--out", s(&a)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--force"));
    assert_eq!(code(&mcsm(&["synth", "--config", s(&cfg_path), "--out", s(&a), "--force"])), 0);
}

#[test]
fn seed_is_mandatory_and_config_is_strict() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcsm(&["synth", "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("seed"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "learning_rate": 0.1}"#).unwrap();
    assert_eq!(code(&mcsm(&["synth", "--config", s(&bad), "--out", s(&dir.path().join("y"))])), 2);

    let o = mcsm(&["train", "--space", "image", "--seed", "1", "--manifest", "absent.json", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn resolved_config_reflects_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = mcsm(&["train", "--space", "image", "--config", s(&cfg), "--seed", "9", "--steps", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 9);
    assert_eq!(resolved["train"]["max_iterations"], 3);
    assert_eq!(resolved["model"]["hidden_dim"], 4);
    assert_eq!(read_csv(&out.join("image_trace.csv")).len(), 3);
}

#[test]
fn training_is_reproducible_and_lr_zero_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    for space in ["image", "text"] {
        let a = dir.path().join(format!("a-{space}"));
        let b = dir.path().join(format!("b-{space}"));
        for out in [&a, &b] {
            let o = mcsm(&["train", "--space", space, "--config", s(&cfg), "--out", s(out)]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
        }
        let ckpt = format!("{space}.mcsc");
        assert_eq!(std::fs::read(a.join(&ckpt)).unwrap(), std::fs::read(b.join(&ckpt)).unwrap());
        let trace = format!("{space}_trace.csv");
        assert_eq!(std::fs::read(a.join(&trace)).unwrap(), std::fs::read(b.join(&trace)).unwrap());

        let flat = dir.path().join(format!("flat-{space}"));
        let o = mcsm(&["train", "--space", space, "--config", s(&cfg), "--lr", "0", "--out", s(&flat)]);
        assert_eq!(code(&o), 0);
        let fresh = dir.path().join(format!("fresh-{space}"));
        mcsm(&["train", "--space", space, "--config", s(&cfg), "--steps", "0", "--out", s(&fresh)]);
        // Parameters never move, so the saved model is the initialization.
        assert_eq!(std::fs::read(flat.join(&ckpt)).unwrap(), std::fs::read(fresh.join(&ckpt)).unwrap());
    }
}

#[test]
fn divergence_exits_3_and_keeps_the_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("div");
    let o = mcsm(&["train", "--space", "text", "--config", s(&cfg), "--lr", "1e200", "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    let rows = read_csv(&out.join("text_trace.csv"));
    assert!(!rows.is_empty() && rows.len() < 10);
    assert!(!out.join("text.mcsc").exists());
}

#[test]
fn eval_rows_depend_on_the_checkpoints_given() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    for space in ["image", "text"] {
        assert_eq!(code(&mcsm(&["train", "--space", space, "--config", s(&cfg), "--out", s(&run)])), 0);
    }
    let image = run.join("image.mcsc");
    let text = run.join("text.mcsc");

    let one = dir.path().join("one");
    let o = mcsm(&["eval", "--config", s(&cfg), "--image-checkpoint", s(&image), "--out", s(&one)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.contains("MCSM-image"));
    assert!(!table.contains("MCSM-text") && !table.contains("MCSM-LF") && !table.contains("MCSM "));

    let both = dir.path().join("both");
    let o = mcsm(&[
        "eval", "--config", s(&cfg), "--image-checkpoint", s(&image), "--text-checkpoint", s(&text), "--out", s(&both),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = read_csv(&both.join("summary.csv"));
    let tags: Vec<_> = summary.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(tags, ["MCSM-image", "MCSM-image", "MCSM-text", "MCSM-text", "MCSM-LF", "MCSM-LF", "MCSM", "MCSM"]);
    // Nine test pairs, every query has relevant candidates.
    let ap = read_csv(&both.join("ap.csv"));
    assert_eq!(ap.len(), 8 * 9);
    for f in ["sim_image.mcsf", "sim_text.mcsf", "sim_late.mcsf", "sim_fused.mcsf"] {
        let m = read_features(&both.join(f)).unwrap();
        assert_eq!((m.rows, m.cols), (9, 9));
    }
    // The image checkpoint in the text slot is a config error.
    let o = mcsm(&["eval", "--config", s(&cfg), "--text-checkpoint", s(&image), "--out", s(&one)]);
    assert_eq!(code(&o), 2);

    // The standalone fuse command reproduces eval's fused matrices.
    let fused = dir.path().join("fused");
    let o = mcsm(&[
        "fuse", "--seed", "1", "--image", s(&both.join("sim_image.mcsf")), "--text", s(&both.join("sim_text.mcsf")),
        "--out", s(&fused),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["sim_late.mcsf", "sim_fused.mcsf"] {
        let a = read_features(&both.join(f)).unwrap().data;
        let b = read_features(&fused.join(f)).unwrap().data;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{f}: {x} vs {y}");
        }
    }
}

#[test]
fn injected_perfect_matrix_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let synth = dir.path().join("synth");
    assert_eq!(code(&mcsm(&["synth", "--config", s(&cfg), "--out", s(&synth)])), 0);
    let manifest_path = synth.join("manifest.json");
    let labels: Vec<u32> = load_manifest(&manifest_path)
        .unwrap()
        .records
        .iter()
        .filter(|r| r.modality == "image" && r.split == "test")
        .map(|r| r.label)
        .collect();
    assert_eq!(labels.len(), 9);
    let data = (0..81).map(|k| if labels[k / 9] == labels[k % 9] { 1.0 } else { 0.0 }).collect();
    let m = dir.path().join("perfect.mcsf");
    write_features(&m, &FeatureMatrix::new(9, 9, data).unwrap()).unwrap();

    let out = dir.path().join("ev");
    let o = mcsm(&[
        "eval", "--config", s(&cfg), "--manifest", s(&manifest_path), "--inject-similarity", s(&m), "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = read_csv(&out.join("summary.csv"));
    assert_eq!(summary.len(), 2);
    for row in &summary {
        assert_eq!(row[2].parse::<f64>().unwrap(), 1.0, "{row:?}");
    }
}

#[test]
fn gradcheck_passes_and_reports_faults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc");
    let o = mcsm(&["gradcheck", "--seed", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("all blocks passed"));
    assert!(std::fs::read_to_string(out.join("gradcheck.txt")).unwrap().contains("loss_text_space"));

    let o = mcsm(&["gradcheck", "--seed", "0", "--out", s(&out), "--inject-fault", "lstm.0.u_forget"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("lstm.0.u_forget failed"), "{}", stderr(&o));

    let o = mcsm(&["gradcheck", "--seed", "0", "--out", s(&out), "--tolerance", "1e-12"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn sweeps_write_one_row_per_distinct_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("sw");
    let o = mcsm(&["sweep", "--config", s(&cfg), "--param", "margin", "--values", "0.1", "0.5", "0.9", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(&out.join("sweep_margin.csv"));
    assert_eq!(rows.iter().map(|r| r[1].as_str()).collect::<Vec<_>>(), ["0.1", "0.5", "0.9"]);
    assert!(rows.iter().all(|r| r[2] == "ok" && r.len() == 3 + 4 * 3));

    let o = mcsm(&[
        "sweep", "--config", s(&cfg), "--param", "lr", "--values", "1e-2", "1e-3", "1e-3", "1e-4", "1e-5", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("duplicate sweep value 0.001"), "{}", stderr(&o));
    let rows = read_csv(&out.join("sweep_lr.csv"));
    assert_eq!(rows.iter().map(|r| r[1].as_str()).collect::<Vec<_>>(), ["0.01", "0.001", "0.0001", "0.00001"]);
}
