use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::Checkpoint;
use super::metrics::{center_accuracy, depth_metrics, psnr, MetricReport, CENTER_THRESHOLD};
use crate::error::{Error, Result};
use crate::sampler::{
    angular_distance, conditional_sample, estimate_poses, generate_multiview, SamplerConfig, VelocityModel,
};
use crate::seqformer::hex;
use crate::synthgen::{decode_depth, Dataset, SampleRecord};
use crate::viewcodec::{LatentCodec, Role, Task, ViewKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub sampler: SamplerConfig,
    /// Evaluate only the first this many records.
    pub max_samples: Option<usize>,
    /// Directory for PNG sample grids; none are written when absent.
    pub grid_dir: Option<PathBuf>,
    /// Records per PNG grid.
    pub grid_rows: usize,
    /// Images (conditions plus targets) per multiview model call.
    pub multiview_budget: usize,
    /// Camera held out and generated in multiview evaluation.
    pub holdout_view: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            max_samples: None,
            grid_dir: None,
            grid_rows: 8,
            multiview_budget: 6,
            holdout_view: 1,
        }
    }
}

/// Outcome for one record: metric values and the images for the grid.
struct SampleEval {
    metrics: Vec<(&'static str, f64)>,
    tiles: Vec<Array3<f32>>,
}

fn image_views(rec: &SampleRecord) -> impl Iterator<Item = (usize, &crate::synthgen::RecordView)> {
    rec.views.iter().enumerate().filter(|(_, v)| v.kind() == ViewKind::Image)
}

fn eval_generic<M: VelocityModel<f32> + ?Sized>(
    model: &M,
    codec: &LatentCodec,
    task: Task,
    rec: &SampleRecord,
    cfg: &SamplerConfig,
) -> Result<SampleEval> {
    let seq = rec.sequence(codec)?;
    let out = conditional_sample(model, &seq, &rec.prompt, cfg)?;
    let target = rec
        .first(Role::Target)
        .ok_or_else(|| Error::invalid(format!("record {} has no target view", rec.index)))?;
    let generated = codec.decode_image(&out.views[target].latent)?;
    let truth = &rec.views[target].grid;
    let mut metrics = vec![("psnr", psnr(&generated, truth)?)];
    let cond = image_views(rec).find(|(_, v)| v.role == Role::Condition).map(|(i, _)| i);
    if let Some(c) = cond {
        metrics.push(("psnr_copy_baseline", psnr(&rec.views[c].grid, truth)?));
    }
    if task == Task::Image2depth {
        let gt = decode_depth(&truth.mapv(f64::from));
        let pred = decode_depth(&generated.mapv(f64::from));
        let valid = gt.mapv(|d| d > 0.0);
        let m = depth_metrics(&pred, &gt, &valid, true)?;
        let constant = Array2::from_elem(gt.raw_dim(), 1.0);
        let base = depth_metrics(&constant, &gt, &valid, true)?;
        metrics.extend([
            ("abs_rel", m.abs_rel),
            ("delta1", m.delta1),
            ("abs_rel_mean_baseline", base.abs_rel),
            ("delta1_mean_baseline", base.delta1),
        ]);
    }
    let mut tiles: Vec<Array3<f32>> = image_views(rec)
        .filter(|(_, v)| v.role == Role::Condition)
        .map(|(_, v)| v.grid.clone())
        .collect();
    tiles.push(generated);
    tiles.push(truth.clone());
    Ok(SampleEval { metrics, tiles })
}

fn eval_multiview<M: VelocityModel<f32> + ?Sized>(
    model: &M,
    codec: &LatentCodec,
    rec: &SampleRecord,
    opts: &EvalOptions,
    cfg: &SamplerConfig,
) -> Result<SampleEval> {
    let cams: Vec<_> = image_views(rec).map(|(_, v)| (v.grid.clone(), rec.poses[v.camera].clone())).collect();
    let h = opts.holdout_view;
    if h >= cams.len() || cams.len() < 2 {
        return Err(Error::invalid(format!(
            "record {} has {} cameras; cannot hold out view {h}",
            rec.index,
            cams.len()
        )));
    }
    let inputs: Vec<_> = cams.iter().enumerate().filter(|(i, _)| *i != h).map(|(_, c)| c.clone()).collect();
    let target_pose = cams[h].1.clone();
    let out = generate_multiview(model, codec, &inputs, &[target_pose.clone()], &rec.prompt, cfg, opts.multiview_budget)?;
    let generated = &out.images[0];
    let truth = &cams[h].0;
    let nearest = inputs
        .iter()
        .min_by(|a, b| angular_distance(&a.1, &target_pose).total_cmp(&angular_distance(&b.1, &target_pose)))
        .expect("at least one input");
    let metrics = vec![
        ("psnr", psnr(generated, truth)?),
        ("psnr_nearest_baseline", psnr(&nearest.0, truth)?),
        ("model_calls", out.calls.len() as f64),
    ];
    let mut tiles: Vec<Array3<f32>> = inputs.iter().map(|c| c.0.clone()).collect();
    tiles.push(generated.clone());
    tiles.push(truth.clone());
    Ok(SampleEval { metrics, tiles })
}

fn eval_pose<M: VelocityModel<f32> + ?Sized>(
    model: &M,
    codec: &LatentCodec,
    rec: &SampleRecord,
    fov_y: f64,
    cfg: &SamplerConfig,
) -> Result<SampleEval> {
    let views: Vec<_> = image_views(rec).map(|(_, v)| v).collect();
    let images: Vec<Array3<f32>> = views.iter().map(|v| v.grid.clone()).collect();
    let gt: Vec<_> = views.iter().map(|v| rec.poses[v.camera].relative_to(&rec.poses[views[0].camera])).collect();
    let est = estimate_poses(model, codec, &images, fov_y, &rec.prompt, cfg)?;
    let rot_err = est
        .poses
        .iter()
        .zip(&gt)
        .map(|(p, g)| {
            let c = ((p.rotation.transpose() * g.rotation).trace() - 1.0) / 2.0;
            c.clamp(-1.0, 1.0).acos().to_degrees()
        })
        .sum::<f64>()
        / gt.len() as f64;
    Ok(SampleEval {
        metrics: vec![
            ("center_accuracy", center_accuracy(&est.poses, &gt, CENTER_THRESHOLD)?),
            ("rotation_error_deg", rot_err),
        ],
        tiles: images,
    })
}

/// Evaluates `model` on `dataset`, one sampling run per record.
///
/// Records are processed concurrently; each uses the sampler seed plus its
/// index, and aggregation runs in record order.
pub fn evaluate<M: VelocityModel<f32> + ?Sized>(
    model: &M,
    codec: &LatentCodec,
    dataset: &Dataset,
    opts: &EvalOptions,
    digest: &str,
) -> Result<MetricReport> {
    opts.sampler.validate()?;
    let task = dataset.task();
    if dataset.codec()? != *codec {
        return Err(Error::Format(format!(
            "dataset {} does not match the model's patch size or ray scaling",
            dataset.dir.display()
        )));
    }
    let n = opts.max_samples.map_or(dataset.records.len(), |m| m.min(dataset.records.len()));
    if n == 0 {
        return Err(Error::invalid("no records to evaluate"));
    }
    let fov_y = dataset.manifest.fov_y;
    let results = dataset.records[..n]
        .par_iter()
        .map(|rec| {
            let cfg = SamplerConfig {
                seed: opts.sampler.seed.wrapping_add(rec.index as u64),
                ..opts.sampler
            };
            match task {
                Task::Multiview => eval_multiview(model, codec, rec, opts, &cfg),
                Task::PoseEstimation => eval_pose(model, codec, rec, fov_y, &cfg),
                _ => eval_generic(model, codec, task, rec, &cfg),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for r in &results {
        for &(k, v) in &r.metrics {
            *sums.entry(k.to_string()).or_default() += v;
        }
    }
    let metrics = sums.into_iter().map(|(k, v)| (k, v / n as f64)).collect();

    let mut h = Sha256::new();
    h.update(digest.as_bytes());
    h.update(serde_json::to_vec(opts).expect("options serialize"));
    h.update(serde_json::to_vec(&dataset.manifest).expect("manifest serializes"));
    let report = MetricReport {
        task: task.as_str().to_string(),
        metrics,
        samples: n,
        config_digest: hex(&h.finalize()),
    };
    report.validate()?;

    if let Some(dir) = &opts.grid_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (b, chunk) in results.chunks(opts.grid_rows.max(1)).enumerate() {
            let rows: Vec<&[Array3<f32>]> = chunk.iter().map(|r| r.tiles.as_slice()).collect();
            let path = dir.join(format!("{}_grid_{b:03}.png", task.as_str()));
            write_image_grid(&path, &rows)?;
        }
    }
    Ok(report)
}

/// Loads a checkpoint and dataset from disk and evaluates them.
pub fn evaluate_checkpoint(checkpoint: &Path, dataset: &Path, opts: &EvalOptions) -> Result<MetricReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = Dataset::load(dataset)?;
    if ds.codec()? != ck.codec {
        return Err(Error::Format(format!(
            "checkpoint {} was trained with patch {} and different ray scaling than dataset {}",
            checkpoint.display(),
            ck.codec.patch,
            dataset.display()
        )));
    }
    evaluate(&ck.model, &ck.codec, &ds, opts, &ck.model.params().digest())
}

fn to_u8(v: f32) -> u8 {
    (((v + 1.0) * 0.5).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes rows of `3 × H × W` images in `[−1, 1]` as one PNG with 1-pixel
/// gutters.
pub fn write_image_grid(path: &Path, rows: &[&[Array3<f32>]]) -> Result<()> {
    let (th, tw) = rows
        .iter()
        .flat_map(|r| r.iter())
        .map(|t| (t.dim().1, t.dim().2))
        .fold((0, 0), |(a, b), (h, w)| (a.max(h), b.max(w)));
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    if th == 0 || cols == 0 {
        return Err(Error::invalid("image grid is empty"));
    }
    let (width, height) = ((cols * (tw + 1) + 1) as u32, (rows.len() * (th + 1) + 1) as u32);
    let mut img = RgbImage::from_pixel(width, height, Rgb([40, 40, 40]));
    for (ri, row) in rows.iter().enumerate() {
        for (ci, tile) in row.iter().enumerate() {
            let (c, h, w) = tile.dim();
            for y in 0..h {
                for x in 0..w {
                    let px = [0, 1, 2].map(|k| to_u8(tile[[k.min(c - 1), y, x]]));
                    img.put_pixel((1 + ci * (tw + 1) + x) as u32, (1 + ri * (th + 1) + y) as u32, Rgb(px));
                }
            }
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}
