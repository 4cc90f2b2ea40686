//! Generate a train/held-out split for one task, train the toy denoiser on it
//! and report held-out metrics next to the task's naive baseline.
//!
//!     cargo run --release --example train_task -- --task img2img_deblur --steps 600

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use clap::Parser;
use seqflow::harness::{evaluate, train_on, EvalOptions, TrainConfig};
use seqflow::sampler::SamplerConfig;
use seqflow::seqformer::ModelConfig;
use seqflow::synthgen::{make_dataset, Dataset, DatasetSpec};
use seqflow::viewcodec::Task;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "img2img_deblur")]
    task: String,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    res: usize,
    #[arg(long, default_value_t = 4)]
    patch: usize,
    #[arg(long, default_value_t = 600)]
    steps: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 96)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 0.8)]
    clean_prob: f64,
    #[arg(long)]
    rope_base: Option<f64>,
    #[arg(long)]
    rope_max_freq: Option<f64>,
    #[arg(long, default_value_t = 32)]
    eval_samples: usize,
    #[arg(long, default_value_t = 50)]
    sample_steps: usize,
    #[arg(long, default_value_t = 1.0)]
    guidance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep datasets and checkpoints here instead of a temporary directory.
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let task = Task::parse(&args.task)?;
    let tmp = tempfile::tempdir()?;
    let work = args.work_dir.clone().unwrap_or_else(|| tmp.path().to_path_buf());

    let t0 = Instant::now();
    let train_dir = work.join(format!("{task}_train"));
    let test_dir = work.join(format!("{task}_test"));
    make_dataset(&DatasetSpec::new(task, args.n, args.seed, args.res).with_patch(args.patch), &train_dir)?;
    make_dataset(
        &DatasetSpec::new(task, args.eval_samples, args.seed + 1_000_003, args.res).with_patch(args.patch),
        &test_dir,
    )?;
    println!("datasets ready in {:.1}s", t0.elapsed().as_secs_f64());

    let mut model = ModelConfig::toy(args.patch);
    model.width = args.width;
    model.depth = args.depth;
    model.heads = args.heads;
    model.rope_base = args.rope_base.unwrap_or(model.rope_base);
    model.rope_max_freq = args.rope_max_freq.unwrap_or(model.rope_max_freq);
    let mut config = TrainConfig::new(model, vec![(task, train_dir.clone())], args.steps, args.batch);
    config.learning_rate = args.lr;
    config.warmup_steps = args.steps / 20;
    config.seed = args.seed;
    config.clean_view_prob = args.clean_prob;
    config.out_dir = Some(work.join("checkpoints"));

    let t1 = Instant::now();
    let outcome = train_on(&config, &[Dataset::load(&train_dir)?])?;
    let secs = t1.elapsed().as_secs_f64();
    let tail: Vec<f64> = outcome.log.iter().rev().take(50).map(|s| s.loss).collect();
    println!(
        "trained {} steps in {secs:.1}s ({:.3}s/step), final loss (mean of last 50) {:.4}",
        args.steps,
        secs / args.steps as f64,
        tail.iter().sum::<f64>() / tail.len() as f64
    );

    let opts = EvalOptions {
        sampler: SamplerConfig {
            steps: args.sample_steps,
            guidance_scale: args.guidance,
            ..SamplerConfig::default()
        },
        grid_dir: Some(work.join("grids")),
        ..EvalOptions::default()
    };
    let t2 = Instant::now();
    let ck = &outcome.checkpoint;
    let report = evaluate(&ck.model, &ck.codec, &Dataset::load(&test_dir)?, &opts, &ck.model.params().digest())?;
    println!("evaluated in {:.1}s", t2.elapsed().as_secs_f64());
    print!("{}", report.to_json());
    Ok(())
}
