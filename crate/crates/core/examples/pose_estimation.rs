//! Pose estimation by denoising ray maps: images are conditions, one ray-map
//! view per image is generated, and each camera is recovered from its rays.
//!
//! With a checkpoint trained on `pose_estimation` data the model is used;
//! without one a stand-in velocity field that knows the true rays is, which
//! shows the procedure and the accuracy metric on their own.
//!
//!     cargo run --release --example pose_estimation -- [checkpoint.ogck]

use ndarray::Array3;
use seqflow::flowpath::TimeVector;
use seqflow::harness::{center_accuracy, Checkpoint, CENTER_THRESHOLD};
use seqflow::sampler::{estimate_poses, SamplerConfig, VelocityModel};
use seqflow::synthgen::{make_dataset, Dataset, DatasetSpec};
use seqflow::viewcodec::{Role, Task, TaskPrompt, ViewKind, ViewSequence};

/// Points every ray-map target at the true rays of its camera.
struct KnownRays(Vec<Array3<f32>>);

impl VelocityModel<f32> for KnownRays {
    fn velocity(&self, seq: &ViewSequence<f32>, times: &TimeVector, _: &TaskPrompt) -> seqflow::Result<Vec<Array3<f32>>> {
        let mut cam = 0;
        Ok(seq
            .views
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if v.kind != ViewKind::Raymap || v.role == Role::Condition {
                    return Array3::zeros(v.latent.raw_dim());
                }
                cam += 1;
                (&self.0[cam - 1] - &v.latent) / (1.0 - times.get(i)) as f32
            })
            .collect())
    }
}

fn main() -> anyhow::Result<()> {
    let ck = std::env::args().nth(1).map(|p| Checkpoint::load(p.as_ref())).transpose()?;
    let patch = ck.as_ref().map_or(2, |c| c.codec.patch);
    let dir = tempfile::tempdir()?;
    make_dataset(&DatasetSpec::new(Task::PoseEstimation, 8, 77, 32).with_patch(patch), dir.path())?;
    let ds = Dataset::load(dir.path())?;
    let codec = ds.codec()?;
    let cfg = SamplerConfig { steps: 20, guidance_scale: 1.0, ..SamplerConfig::default() };

    for rec in &ds.records {
        let images: Vec<_> = rec.views.iter().filter(|v| v.kind() == ViewKind::Image).map(|v| v.grid.clone()).collect();
        let rays: Vec<_> = rec.views.iter().filter(|v| v.kind() == ViewKind::Raymap).map(|v| v.grid.clone()).collect();
        let est = match &ck {
            Some(c) => estimate_poses(&c.model, &c.codec, &images, ds.manifest.fov_y, &rec.prompt, &cfg)?,
            None => estimate_poses(&KnownRays(rays), &codec, &images, ds.manifest.fov_y, &rec.prompt, &cfg)?,
        };
        let gt: Vec<_> = rec.poses.iter().map(|p| p.relative_to(&rec.poses[0])).collect();
        let acc = center_accuracy(&est.poses, &gt, CENTER_THRESHOLD)?;
        let centers: Vec<String> = est.poses.iter().map(|p| format!("{:.2?}", p.center.as_slice())).collect();
        println!("record {}: accuracy {acc:.2}, centers {}", rec.index, centers.join(" "));
    }
    Ok(())
}
