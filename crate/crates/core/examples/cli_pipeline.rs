//! The command line end to end, driven in-process: datagen, a short training
//! run from a JSON config, sampling and evaluation.
//!
//!     cargo run --release --example cli_pipeline -- /tmp/pipeline

use std::path::PathBuf;

use seqflow::harness::{cli, TrainConfig};
use seqflow::seqformer::ModelConfig;
use seqflow::viewcodec::Task;

fn run(args: &[&str]) -> anyhow::Result<()> {
    println!("$ seqflow {}", args.join(" "));
    let code = cli::run(std::iter::once("seqflow").chain(args.iter().copied()));
    anyhow::ensure!(code == 0, "exit code {code}");
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let work = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("pipeline"));
    let data = work.join("data");
    let s = |p: &PathBuf| p.to_string_lossy().into_owned();

    run(&["datagen", "--task", "depth2image", "--n", "16", "--res", "16", "--out", &s(&data)])?;

    let mut model = ModelConfig::toy(2);
    model.width = 48;
    model.depth = 2;
    let mut config = TrainConfig::new(model, vec![(Task::Depth2image, data.clone())], 20, 4);
    config.out_dir = Some(work.join("ck"));
    let cfg_path = work.join("train.json");
    std::fs::write(&cfg_path, config.to_json())?;
    run(&["train", "--config", &s(&cfg_path)])?;

    let ck = s(&work.join("ck").join("final.ogck"));
    run(&["sample", "--checkpoint", &ck, "--task", "depth2image", "--input", &s(&data),
        "--steps", "10", "--max-samples", "4", "--out", &s(&work.join("samples"))])?;
    run(&["eval", "--task", "depth2image", "--checkpoint", &ck, "--dataset", &s(&data),
        "--report", &s(&work.join("report.json")), "--steps", "10", "--max-samples", "8"])?;
    Ok(())
}
