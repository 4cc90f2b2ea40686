//! Exit-code contract of the `seqflow` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn seqflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqflow"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("run seqflow")
}

fn code(args: &[&str]) -> i32 {
    seqflow(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_and_bad_arguments() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["datagen", "--task", "nope", "--n", "1", "--out", "/tmp/x"]), 2);
    assert_eq!(code(&["datagen", "--task", "text2image", "--n", "many", "--out", "/tmp/x"]), 2);
    assert_eq!(code(&["datagen", "--task", "text2image", "--n", "1", "--res", "30", "--patch", "4", "--out", "/tmp/x"]), 2);
}

#[test]
fn io_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent");
    assert_eq!(code(&["train", "--config", p(&missing.join("c.json"))]), 3);
    assert_eq!(
        code(&[
            "eval", "--task", "text2image", "--checkpoint", p(&missing.join("a.ogck")),
            "--dataset", p(&missing), "--report", p(&dir.path().join("r.json")),
        ]),
        3
    );
    // output path below a regular file
    let file = dir.path().join("file");
    fs::write(&file, b"x").unwrap();
    assert_eq!(code(&["datagen", "--task", "text2image", "--n", "1", "--out", p(&file.join("sub"))]), 3);
}

#[test]
fn datagen_train_sample_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = seqflow(&["datagen", "--task", "image2depth", "--n", "3", "--res", "16", "--out", p(&data)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("manifest.json").exists());

    let config = serde_json::json!({
        "model": {
            "width": 24, "depth": 1, "heads": 2, "image_channels": 12, "raymap_channels": 6,
            "vocab_size": 40, "max_views": 12, "mlp_ratio": 2, "time_dim": 16,
            "rope_base": 100.0, "zero_init": true
        },
        "tasks": [{"task": "image2depth", "dataset": data}],
        "steps": 3,
        "batch_size": 2,
        "out_dir": dir.path().join("ck"),
    });
    let cfg = dir.path().join("train.json");
    fs::write(&cfg, config.to_string()).unwrap();
    let out = seqflow(&["train", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim().len(), 64);
    let ck = dir.path().join("ck").join("final.ogck");

    let samples = dir.path().join("samples");
    let args = ["sample", "--checkpoint", p(&ck), "--task", "image2depth", "--input", p(&data),
        "--out", p(&samples), "--steps", "2", "--max-samples", "2"];
    assert_eq!(code(&args), 0);
    assert!(samples.join("samples_000.png").exists());
    assert!(samples.join("000001_0_sample.ogen").exists());

    let report = dir.path().join("report.json");
    assert_eq!(
        code(&["eval", "--task", "image2depth", "--checkpoint", p(&ck), "--dataset", p(&data),
            "--report", p(&report), "--steps", "2"]),
        0
    );
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["task"], "image2depth");
    assert_eq!(r["samples"], 3);
    assert!(r["metrics"]["abs_rel"].is_number());

    // task mismatch between flag and dataset is an argument error
    assert_eq!(
        code(&["eval", "--task", "text2image", "--checkpoint", p(&ck), "--dataset", p(&data),
            "--report", p(&report)]),
        2
    );
    // unknown config field
    fs::write(&cfg, config.to_string().replacen("\"steps\"", "\"stepz\": 1, \"steps\"", 1)).unwrap();
    assert_eq!(code(&["train", "--config", p(&cfg)]), 2);
}

#[test]
fn corrupt_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&["datagen", "--task", "text2image", "--n", "2", "--res", "16", "--out", p(&data)]), 0);
    let bad_ck = dir.path().join("bad.ogck");
    fs::write(&bad_ck, b"not a checkpoint").unwrap();
    let report = dir.path().join("r.json");
    assert_eq!(
        code(&["eval", "--task", "text2image", "--checkpoint", p(&bad_ck), "--dataset", p(&data),
            "--report", p(&report)]),
        4
    );
    let manifest = data.join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap().replacen("\"version\": 1", "\"version\": 9", 1);
    fs::write(&manifest, text).unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        serde_json::json!({
            "model": {
                "width": 24, "depth": 1, "heads": 2, "image_channels": 12, "raymap_channels": 6,
                "vocab_size": 40, "max_views": 12, "mlp_ratio": 2, "time_dim": 16,
                "rope_base": 100.0, "zero_init": true
            },
            "tasks": [{"task": "text2image", "dataset": data}],
            "steps": 1, "batch_size": 1,
        })
        .to_string(),
    )
    .unwrap();
    assert_eq!(code(&["train", "--config", p(&cfg)]), 4);
}
