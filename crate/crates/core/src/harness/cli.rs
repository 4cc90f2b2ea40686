//! `seqflow` command line: datagen, train, sample, eval.
//!
//! Exit codes: 0 success, 2 invalid arguments, 3 I/O, 4 format or version.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ndarray::Array3;
use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::eval::{evaluate, write_image_grid, EvalOptions};
use super::train::train;
use crate::error::{Error, Result};
use crate::sampler::{conditional_sample, estimate_poses, generate_multiview, SamplerConfig};
use crate::synthgen::{make_dataset, ogen, Dataset, DatasetSpec, DEFAULT_PATCH};
use crate::viewcodec::{Role, Task, ViewKind};

#[derive(Parser, Debug)]
#[command(name = "seqflow", version, about = "Sequential flow matching over multi-view latent sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone, Copy)]
struct SamplerArgs {
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 5.0)]
    guidance: f64,
    #[arg(long, default_value_t = 3.0)]
    shift: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl From<SamplerArgs> for SamplerConfig {
    fn from(a: SamplerArgs) -> Self {
        SamplerConfig {
            steps: a.steps,
            guidance_scale: a.guidance,
            shift: a.shift,
            seed: a.seed,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset for one task.
    Datagen {
        #[arg(long)]
        task: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        res: usize,
        #[arg(long, default_value_t = DEFAULT_PATCH)]
        patch: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sample the target views of every record of a dataset.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_samples: Option<usize>,
        /// Images per model call for multiview generation.
        #[arg(long, default_value_t = 6)]
        budget: usize,
    },
    /// Evaluate a checkpoint on a dataset and write a JSON report.
    Eval {
        #[arg(long)]
        task: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        max_samples: Option<usize>,
        /// Where to write PNG sample grids (defaults to the report's directory).
        #[arg(long)]
        grid_dir: Option<PathBuf>,
    },
}

fn load_for(task: Task, dir: &Path) -> Result<Dataset> {
    let ds = Dataset::load(dir)?;
    if ds.task() != task {
        return Err(Error::invalid(format!(
            "dataset {} holds task {}, not {task}",
            dir.display(),
            ds.task()
        )));
    }
    Ok(ds)
}

#[derive(Serialize)]
struct PoseOut {
    index: usize,
    rotations: Vec<[f64; 9]>,
    centers: Vec<[f64; 3]>,
}

fn sample_command(
    checkpoint: &Path,
    task: Task,
    input: &Path,
    cfg: SamplerConfig,
    out: &Path,
    max_samples: Option<usize>,
    budget: usize,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = load_for(task, input)?;
    if ds.codec()? != ck.codec {
        return Err(Error::Format("checkpoint and dataset use different latent codecs".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let n = max_samples.map_or(ds.records.len(), |m| m.min(ds.records.len()));
    let mut rows: Vec<Vec<Array3<f32>>> = Vec::new();
    let mut poses = Vec::new();
    for rec in &ds.records[..n] {
        let cfg = SamplerConfig {
            seed: cfg.seed.wrapping_add(rec.index as u64),
            ..cfg
        };
        let images: Vec<(usize, Array3<f32>)> = match task {
            Task::PoseEstimation => {
                let imgs: Vec<_> = rec.views.iter().filter(|v| v.kind() == ViewKind::Image).map(|v| v.grid.clone()).collect();
                let est = estimate_poses(&ck.model, &ck.codec, &imgs, ds.manifest.fov_y, &rec.prompt, &cfg)?;
                poses.push(PoseOut {
                    index: rec.index,
                    rotations: est.poses.iter().map(|p| p.rotation_row_major()).collect(),
                    centers: est.poses.iter().map(|p| [p.center.x, p.center.y, p.center.z]).collect(),
                });
                rows.push(imgs);
                continue;
            }
            Task::Multiview => {
                let cams = rec.views.iter().enumerate().filter(|(_, v)| v.kind() == ViewKind::Image);
                let (conds, targets): (Vec<_>, Vec<_>) = cams.partition(|(_, v)| v.role == Role::Condition);
                let inputs: Vec<_> = conds.iter().map(|(_, v)| (v.grid.clone(), rec.poses[v.camera].clone())).collect();
                let target_poses: Vec<_> = targets.iter().map(|(_, v)| rec.poses[v.camera].clone()).collect();
                let gen = generate_multiview(&ck.model, &ck.codec, &inputs, &target_poses, &rec.prompt, &cfg, budget)?;
                targets.iter().map(|(i, _)| *i).zip(gen.images).collect()
            }
            _ => {
                let seq = rec.sequence(&ck.codec)?;
                let res = conditional_sample(&ck.model, &seq, &rec.prompt, &cfg)?;
                seq.targets()
                    .map(|i| Ok((i, ck.codec.decode_image(&res.views[i].latent)?)))
                    .collect::<Result<_>>()?
            }
        };
        let mut row: Vec<Array3<f32>> = rec
            .views
            .iter()
            .filter(|v| v.kind() == ViewKind::Image && v.role == Role::Condition)
            .map(|v| v.grid.clone())
            .collect();
        for (i, img) in images {
            ogen::write_grid(&out.join(format!("{:06}_{i}_sample.ogen", rec.index)), &img.clone().into_dyn())?;
            row.push(img);
        }
        rows.push(row);
    }
    if !poses.is_empty() {
        let path = out.join("poses.json");
        let text = serde_json::to_string_pretty(&poses).expect("poses serialize") + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    for (b, chunk) in rows.chunks(8).enumerate() {
        let refs: Vec<&[Array3<f32>]> = chunk.iter().map(|r| r.as_slice()).collect();
        write_image_grid(&out.join(format!("samples_{b:03}.png")), &refs)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Datagen { task, n, seed, res, patch, out } => {
            let spec = DatasetSpec::new(Task::parse(&task)?, n, seed, res).with_patch(patch);
            let m = make_dataset(&spec, &out)?;
            log::info!("wrote {} {} records to {}", m.records.len(), m.task, out.display());
        }
        Command::Train { config } => {
            let cfg = TrainConfig::load(&config)?;
            let outcome = train(&cfg)?;
            for p in &outcome.written {
                log::info!("checkpoint {}", p.display());
            }
            println!("{}", outcome.checkpoint.model.params().digest());
        }
        Command::Sample { checkpoint, task, input, sampler, out, max_samples, budget } => {
            sample_command(&checkpoint, Task::parse(&task)?, &input, sampler.into(), &out, max_samples, budget)?;
        }
        Command::Eval { task, checkpoint, dataset, report, sampler, max_samples, grid_dir } => {
            let task = Task::parse(&task)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let ds = load_for(task, &dataset)?;
            if ds.codec()? != ck.codec {
                return Err(Error::Format(format!(
                    "checkpoint {} does not match dataset {}",
                    checkpoint.display(),
                    dataset.display()
                )));
            }
            let grid_dir = grid_dir.or_else(|| report.parent().map(Path::to_path_buf));
            let opts = EvalOptions {
                sampler: sampler.into(),
                max_samples,
                grid_dir,
                ..EvalOptions::default()
            };
            let r = evaluate(&ck.model, &ck.codec, &ds, &opts, &ck.model.params().digest())?;
            let text = r.to_json();
            fs::write(&report, &text).map_err(|e| Error::io(&report, e))?;
            print!("{text}");
        }
    }
    Ok(())
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
