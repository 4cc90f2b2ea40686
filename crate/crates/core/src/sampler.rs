//! Conditional generation by Euler integration of the learned velocity field.
//!
//! Condition views are held at their clean latents and the clean time for the
//! whole run; target views start from Gaussian noise and follow a shifted
//! time grid from 0 to 1.

use nalgebra::Vector3;
use ndarray::{Array, Array3, Dimension, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowpath::{shift_time, TimeVector, CLEAN_TIME, NOISE_TIME};
use crate::real::Real;
use crate::seqformer::SeqFormer;
use crate::viewcodec::{
    pose_from_raymap, CameraPose, LatentCodec, PluckerRayMap, Role, TaskPrompt, View, ViewKind,
    ViewSequence,
};

/// Anything that predicts per-view velocities for a sequence.
pub trait VelocityModel<F: Real>: Sync {
    fn velocity(&self, sequence: &ViewSequence<F>, times: &TimeVector, prompt: &TaskPrompt) -> Result<Vec<Array3<F>>>;

    /// Largest sequence length a single call accepts.
    fn max_views(&self) -> usize {
        usize::MAX
    }
}

impl<F: Real> VelocityModel<F> for SeqFormer<F> {
    fn velocity(&self, sequence: &ViewSequence<F>, times: &TimeVector, prompt: &TaskPrompt) -> Result<Vec<Array3<F>>> {
        self.forward(sequence, times, prompt)
    }

    fn max_views(&self) -> usize {
        self.config().max_views
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance_scale: f64,
    pub shift: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            guidance_scale: 5.0,
            shift: 3.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("sampler needs at least one step"));
        }
        if !(self.guidance_scale >= 0.0) {
            return Err(Error::invalid("guidance scale must be non-negative"));
        }
        if !(self.shift >= 1.0) {
            return Err(Error::invalid("shift must be >= 1"));
        }
        Ok(())
    }
}

/// `steps + 1` times from the noise endpoint to the clean endpoint: a
/// uniform grid mapped through [`shift_time`].
pub fn time_grid(steps: usize, shift: f64) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::invalid("time grid needs at least one step"));
    }
    let mut grid = (0..=steps)
        .map(|k| shift_time(k as f64 / steps as f64, shift))
        .collect::<Result<Vec<_>>>()?;
    grid[0] = NOISE_TIME;
    grid[steps] = CLEAN_TIME;
    Ok(grid)
}

/// `uncond + scale·(cond − uncond)`; scale 1 and 0 return the respective
/// branch unchanged.
pub fn cfg_combine<F: Real, D: Dimension>(cond: &Array<F, D>, uncond: &Array<F, D>, scale: f64) -> Result<Array<F, D>> {
    if cond.shape() != uncond.shape() {
        return Err(Error::invalid(format!(
            "cfg_combine: shape mismatch {:?} vs {:?}",
            cond.shape(),
            uncond.shape()
        )));
    }
    if scale == 1.0 {
        return Ok(cond.clone());
    }
    if scale == 0.0 {
        return Ok(uncond.clone());
    }
    let s = F::of(scale);
    Ok(Zip::from(cond).and(uncond).map_collect(|&c, &u| u + s * (c - u)))
}

fn guided_velocity<F: Real, M: VelocityModel<F> + ?Sized>(
    model: &M,
    seq: &ViewSequence<F>,
    times: &TimeVector,
    prompt: &TaskPrompt,
    scale: f64,
) -> Result<Vec<Array3<F>>> {
    if scale == 1.0 {
        return model.velocity(seq, times, prompt);
    }
    let uncond = model.velocity(seq, times, &TaskPrompt::null())?;
    if scale == 0.0 {
        return Ok(uncond);
    }
    let cond = model.velocity(seq, times, prompt)?;
    cond.iter()
        .zip(&uncond)
        .map(|(c, u)| cfg_combine(c, u, scale))
        .collect()
}

/// Integrates the target views of `sequence` from noise to data.
///
/// Condition latents are passed to the model unchanged at every step (with
/// the clean time) and are returned bit-identical.
pub fn conditional_sample<F: Real, M: VelocityModel<F> + ?Sized>(
    model: &M,
    sequence: &ViewSequence<F>,
    prompt: &TaskPrompt,
    cfg: &SamplerConfig,
) -> Result<ViewSequence<F>> {
    cfg.validate()?;
    let targets: Vec<usize> = sequence.targets().collect();
    if targets.is_empty() {
        return Err(Error::invalid("conditional_sample needs at least one target view"));
    }
    if sequence.len() > model.max_views() {
        return Err(Error::Capacity {
            got: sequence.len(),
            max: model.max_views(),
        });
    }
    let grid = time_grid(cfg.steps, cfg.shift)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = sequence.clone();
    for &i in &targets {
        let v = &mut state.views[i];
        v.latent = Array3::from_shape_simple_fn(v.latent.raw_dim(), || F::of(rng.sample(StandardNormal)));
    }

    for k in 0..cfg.steps {
        let t = grid[k];
        for (v, orig) in state.views.iter_mut().zip(&sequence.views) {
            match v.role {
                Role::Condition => {
                    v.time = CLEAN_TIME;
                    if v.latent != orig.latent {
                        v.latent.assign(&orig.latent);
                    }
                }
                Role::Target => v.time = t,
            }
        }
        let times = TimeVector::new(state.views.iter().map(|v| v.time).collect())?;
        let vel = guided_velocity(model, &state, &times, prompt, cfg.guidance_scale)?;
        if vel.len() != state.len() {
            return Err(Error::invalid("model returned the wrong number of views"));
        }
        let dt = F::of(grid[k + 1] - t);
        for &i in &targets {
            let x = &mut state.views[i].latent;
            if vel[i].dim() != x.dim() {
                return Err(Error::invalid("model velocity shape differs from its view"));
            }
            Zip::from(x).and(&vel[i]).for_each(|xv, &vv| *xv += dt * vv);
        }
    }
    for &i in &targets {
        state.views[i].time = CLEAN_TIME;
    }
    Ok(state)
}

/// Which image fills a camera slot of a multiview call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraSource {
    Input(usize),
    /// A previously generated target (an anchor).
    Generated(usize),
}

/// One conditional-sampling call of the multiview procedure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiviewCall {
    pub conditions: Vec<CameraSource>,
    pub targets: Vec<usize>,
}

pub const ANCHOR_COUNT: usize = 3;
pub const VIEWS_PER_BATCH: usize = 3;

fn center_direction(pose: &CameraPose) -> Vector3<f64> {
    pose.center.try_normalize(1e-12).unwrap_or_else(Vector3::z)
}

/// Great-circle distance between the viewing directions (from the origin)
/// of two cameras, i.e. distance in (azimuth, elevation).
pub fn angular_distance(a: &CameraPose, b: &CameraPose) -> f64 {
    center_direction(a).dot(&center_direction(b)).clamp(-1.0, 1.0).acos()
}

/// Plans the calls that generate `targets` from `n_inputs` posed images when
/// at most `budget` images (conditions plus targets) fit in one call.
///
/// If everything fits, one call does it. Otherwise three spread-out anchors
/// are generated first from the inputs, then the rest in batches of three,
/// each conditioned on the first input and the anchor nearest the batch.
pub fn plan_multiview(n_inputs: usize, targets: &[CameraPose], budget: usize) -> Result<Vec<MultiviewCall>> {
    if n_inputs == 0 {
        return Err(Error::invalid("multiview generation needs at least one condition image"));
    }
    if targets.is_empty() {
        return Err(Error::invalid("multiview generation needs at least one target pose"));
    }
    if n_inputs + targets.len() <= budget {
        return Ok(vec![MultiviewCall {
            conditions: (0..n_inputs).map(CameraSource::Input).collect(),
            targets: (0..targets.len()).collect(),
        }]);
    }
    if budget < 2 + VIEWS_PER_BATCH || budget < 1 + ANCHOR_COUNT {
        return Err(Error::invalid(format!(
            "a per-call budget of {budget} images is too small for the anchor procedure"
        )));
    }
    let n = targets.len();
    let anchors: Vec<usize> = (0..ANCHOR_COUNT)
        .map(|k| ((k * (n - 1)) as f64 / (ANCHOR_COUNT - 1) as f64).round() as usize)
        .collect();
    let first_inputs = n_inputs.min(budget - ANCHOR_COUNT);
    let mut calls = vec![MultiviewCall {
        conditions: (0..first_inputs).map(CameraSource::Input).collect(),
        targets: anchors.clone(),
    }];
    let rest: Vec<usize> = (0..n).filter(|i| !anchors.contains(i)).collect();
    for batch in rest.chunks(VIEWS_PER_BATCH) {
        let nearest = *anchors
            .iter()
            .min_by(|&&a, &&b| {
                let da: f64 = batch.iter().map(|&t| angular_distance(&targets[a], &targets[t])).sum();
                let db: f64 = batch.iter().map(|&t| angular_distance(&targets[b], &targets[t])).sum();
                da.total_cmp(&db)
            })
            .expect("anchors");
        calls.push(MultiviewCall {
            conditions: vec![CameraSource::Input(0), CameraSource::Generated(nearest)],
            targets: batch.to_vec(),
        });
    }
    Ok(calls)
}

fn azimuth(pose: &CameraPose) -> f64 {
    pose.center.x.atan2(pose.center.z)
}

/// Sequence for one multiview call: per camera an image view followed by its
/// ray-map view, cameras ordered by azimuth. Ray maps are always conditions.
///
/// Also returns the index of each target's image view.
pub fn multiview_sequence<F: Real>(
    codec: &LatentCodec,
    conditions: &[(&Array3<F>, &CameraPose)],
    targets: &[&CameraPose],
) -> Result<(ViewSequence<F>, Vec<usize>)> {
    let mut cameras: Vec<(Option<&Array3<F>>, &CameraPose, Option<usize>)> = conditions
        .iter()
        .map(|&(img, pose)| (Some(img), pose, None))
        .chain(targets.iter().enumerate().map(|(k, &pose)| (None, pose, Some(k))))
        .collect();
    cameras.sort_by(|a, b| azimuth(a.1).total_cmp(&azimuth(b.1)));
    let mut views = Vec::with_capacity(2 * cameras.len());
    let mut slots = vec![0; targets.len()];
    for (image, pose, target) in cameras {
        match (image, target) {
            (Some(image), _) => views.push(View::condition(ViewKind::Image, codec.encode_image(image)?)),
            (None, Some(k)) => {
                let (h, w) = pose.grid;
                slots[k] = views.len();
                views.push(View::target(ViewKind::Image, Array3::zeros((codec.image_channels(), h, w))));
            }
            (None, None) => unreachable!("every camera is a condition or a target"),
        }
        views.push(View::condition(ViewKind::Raymap, codec.encode_pose(pose)?));
    }
    Ok((ViewSequence::new(views), slots))
}

/// Generated images (pixel space) for every target pose, with the call plan
/// that produced them.
pub struct MultiviewOutput<F> {
    pub images: Vec<Array3<F>>,
    pub calls: Vec<MultiviewCall>,
}

pub fn generate_multiview<F: Real, M: VelocityModel<F> + ?Sized>(
    model: &M,
    codec: &LatentCodec,
    inputs: &[(Array3<F>, CameraPose)],
    targets: &[CameraPose],
    prompt: &TaskPrompt,
    cfg: &SamplerConfig,
    budget: usize,
) -> Result<MultiviewOutput<F>> {
    let calls = plan_multiview(inputs.len(), targets, budget)?;
    let mut generated: Vec<Option<Array3<F>>> = vec![None; targets.len()];
    for (ci, call) in calls.iter().enumerate() {
        let conds: Vec<(&Array3<F>, &CameraPose)> = call
            .conditions
            .iter()
            .map(|src| match *src {
                CameraSource::Input(i) => Ok((&inputs[i].0, &inputs[i].1)),
                CameraSource::Generated(t) => generated[t]
                    .as_ref()
                    .map(|img| (img, &targets[t]))
                    .ok_or_else(|| Error::invalid("anchor used before it was generated")),
            })
            .collect::<Result<_>>()?;
        let tposes: Vec<&CameraPose> = call.targets.iter().map(|&t| &targets[t]).collect();
        let (seq, slots) = multiview_sequence(codec, &conds, &tposes)?;
        let call_cfg = SamplerConfig {
            seed: cfg.seed.wrapping_add(ci as u64),
            ..*cfg
        };
        let out = conditional_sample(model, &seq, prompt, &call_cfg)?;
        for (k, &t) in call.targets.iter().enumerate() {
            generated[t] = Some(codec.decode_image(&out.views[slots[k]].latent)?);
        }
    }
    Ok(MultiviewOutput {
        images: generated.into_iter().map(|g| g.expect("every target generated")).collect(),
        calls,
    })
}

/// Result of pose estimation: poses relative to the first camera, the raw
/// recovered poses, and the direction-normalized ray maps they came from.
pub struct PoseEstimate {
    pub poses: Vec<CameraPose>,
    pub absolute: Vec<CameraPose>,
    pub rays: Vec<PluckerRayMap>,
}

/// Recovers camera poses by denoising one ray-map view per image.
pub fn estimate_poses<F: Real, M: VelocityModel<F> + ?Sized>(
    model: &M,
    codec: &LatentCodec,
    images: &[Array3<F>],
    fov_y: f64,
    prompt: &TaskPrompt,
    cfg: &SamplerConfig,
) -> Result<PoseEstimate> {
    if images.len() < 2 {
        return Err(Error::invalid("pose estimation needs at least two images"));
    }
    let mut views = Vec::with_capacity(2 * images.len());
    for image in images {
        let latent = codec.encode_image(image)?;
        let (_, h, w) = latent.dim();
        views.push(View::condition(ViewKind::Image, latent));
        views.push(View::target(ViewKind::Raymap, Array3::zeros((6, h, w))));
    }
    let out = conditional_sample(model, &ViewSequence::new(views), prompt, cfg)?;
    let mut rays = Vec::with_capacity(images.len());
    let mut absolute = Vec::with_capacity(images.len());
    for i in 0..images.len() {
        let mut map = codec.decode_rays(&out.views[2 * i + 1].latent)?;
        for d in &mut map.directions {
            *d = d.try_normalize(1e-12).ok_or_else(|| {
                Error::DegenerateGeometry(format!("view {i}: denoised ray with zero direction"))
            })?;
        }
        absolute.push(pose_from_raymap(&map, fov_y)?);
        rays.push(map);
    }
    let poses = absolute.iter().map(|p| p.relative_to(&absolute[0])).collect();
    Ok(PoseEstimate {
        poses,
        absolute,
        rays,
    })
}
