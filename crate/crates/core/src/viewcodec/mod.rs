//! Conversion between task-level objects and the latent views the model sees.
//!
//! Images go through an exactly invertible patch codec, camera poses become
//! Plücker ray maps, and prompts become token streams over a closed vocabulary.

mod camera;
mod prompt;

pub use camera::{
    camera_direction, latent_to_raymap, look_at, orbit_pose, pose_from_raymap, rays_from_pose,
    raymap_to_latent, CameraPose, PluckerRayMap, RayStats,
};
pub use prompt::{
    build_prompt, Binding, PromptToken, Task, TaskPrompt, TaskToken, Vocabulary, CLASS_NAMES,
    COLOR_WORDS, MAX_MARKERS, SHAPE_WORDS, TOKEN_FEATURES,
};

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::flowpath::CLEAN_TIME;
use crate::real::Real;

/// Channel count of a ray-map latent: moment then direction.
pub const RAYMAP_CHANNELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Image,
    Raymap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Condition,
    Target,
}

/// One element of a view sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct View<F> {
    pub kind: ViewKind,
    /// `C × h × w` latent grid.
    pub latent: Array3<F>,
    pub role: Role,
    pub time: f64,
}

impl<F: Real> View<F> {
    /// A clean condition view pinned at the clean-data time.
    pub fn condition(kind: ViewKind, latent: Array3<F>) -> Self {
        Self {
            kind,
            latent,
            role: Role::Condition,
            time: CLEAN_TIME,
        }
    }

    /// A target view; its latent is a placeholder until sampled.
    pub fn target(kind: ViewKind, latent: Array3<F>) -> Self {
        Self {
            kind,
            latent,
            role: Role::Target,
            time: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.latent.dim().0
    }

    pub fn grid(&self) -> (usize, usize) {
        let (_, h, w) = self.latent.dim();
        (h, w)
    }
}

/// Ordered views consumed by the model and evolved by the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSequence<F> {
    pub views: Vec<View<F>>,
}

impl<F: Real> ViewSequence<F> {
    pub fn new(views: Vec<View<F>>) -> Self {
        Self { views }
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        self.views
            .iter()
            .enumerate()
            .filter(|(_, v)| v.role == Role::Target)
            .map(|(i, _)| i)
    }

    pub fn latents(&self) -> Vec<Array3<F>> {
        self.views.iter().map(|v| v.latent.clone()).collect()
    }

    /// Checks channel counts against the patch size and the condition-time rule.
    pub fn validate(&self, patch: usize) -> Result<()> {
        for (i, v) in self.views.iter().enumerate() {
            let want = match v.kind {
                ViewKind::Image => 3 * patch * patch,
                ViewKind::Raymap => RAYMAP_CHANNELS,
            };
            if v.channels() != want {
                return Err(Error::invalid(format!(
                    "view {i}: {:?} latent has {} channels, expected {want}",
                    v.kind,
                    v.channels()
                )));
            }
            if v.role == Role::Condition && v.time != CLEAN_TIME {
                return Err(Error::invalid(format!(
                    "view {i}: condition view must sit at the clean time"
                )));
            }
        }
        Ok(())
    }
}

/// Rearranges `p×p` pixel blocks into channels: `3×H×W → 3p²×(H/p)×(W/p)`.
///
/// Output channel `c·p² + dy·p + dx` holds pixel `(c, y·p + dy, x·p + dx)`.
pub fn patchify<F: Real>(image: &Array3<F>, p: usize) -> Result<Array3<F>> {
    let (c, h, w) = image.dim();
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::invalid(format!(
            "patch size {p} does not divide image {h}x{w}"
        )));
    }
    let (gh, gw) = (h / p, w / p);
    let mut out = Array3::zeros((c * p * p, gh, gw));
    for ch in 0..c {
        for dy in 0..p {
            for dx in 0..p {
                let oc = ch * p * p + dy * p + dx;
                for y in 0..gh {
                    for x in 0..gw {
                        out[[oc, y, x]] = image[[ch, y * p + dy, x * p + dx]];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`patchify`].
pub fn unpatchify<F: Real>(latent: &Array3<F>, p: usize) -> Result<Array3<F>> {
    let (cl, gh, gw) = latent.dim();
    if p == 0 || cl % (p * p) != 0 {
        return Err(Error::invalid(format!(
            "latent with {cl} channels is not a patch-{p} image latent"
        )));
    }
    let c = cl / (p * p);
    let mut out = Array3::zeros((c, gh * p, gw * p));
    for ch in 0..c {
        for dy in 0..p {
            for dx in 0..p {
                let ic = ch * p * p + dy * p + dx;
                for y in 0..gh {
                    for x in 0..gw {
                        out[[ch, y * p + dy, x * p + dx]] = latent[[ic, y, x]];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Patch size and ray-map scaling shared by a dataset and its model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatentCodec {
    pub patch: usize,
    pub ray_stats: RayStats,
}

impl LatentCodec {
    pub fn new(patch: usize, ray_stats: RayStats) -> Result<Self> {
        if patch == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        ray_stats.validate()?;
        Ok(Self { patch, ray_stats })
    }

    pub fn image_channels(&self) -> usize {
        3 * self.patch * self.patch
    }

    pub fn encode_image<F: Real>(&self, image: &Array3<F>) -> Result<Array3<F>> {
        patchify(image, self.patch)
    }

    pub fn decode_image<F: Real>(&self, latent: &Array3<F>) -> Result<Array3<F>> {
        unpatchify(latent, self.patch)
    }

    /// Ray-map latent of `pose` on its own grid.
    pub fn encode_pose<F: Real>(&self, pose: &CameraPose) -> Result<Array3<F>> {
        raymap_to_latent(&rays_from_pose(pose)?, &self.ray_stats)
    }

    pub fn decode_rays<F: Real>(&self, latent: &Array3<F>) -> Result<PluckerRayMap> {
        latent_to_raymap(latent, &self.ray_stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn patch_shapes_and_constants() {
        let img = Array3::<f32>::from_elem((3, 16, 16), 0.25);
        let lat = patchify(&img, 2).unwrap();
        assert_eq!(lat.dim(), (12, 8, 8));
        assert!(lat.iter().all(|&v| v == 0.25));
        let zero = Array3::<f32>::zeros((12, 8, 8));
        let back = unpatchify(&zero, 2).unwrap();
        assert_eq!(back.dim(), (3, 16, 16));
        assert!(back.iter().all(|&v| v == 0.0));
        assert!(patchify(&Array3::<f32>::zeros((3, 15, 16)), 2).is_err());
        assert!(unpatchify(&Array3::<f32>::zeros((5, 4, 4)), 2).is_err());
    }

    #[test]
    fn view_validation() {
        let ok = ViewSequence::new(vec![
            View::condition(ViewKind::Image, Array3::<f32>::zeros((12, 4, 4))),
            View::target(ViewKind::Raymap, Array3::<f32>::zeros((6, 4, 4))),
        ]);
        assert!(ok.validate(2).is_ok());
        assert_eq!(ok.targets().collect::<Vec<_>>(), vec![1]);
        let mut bad = ok.clone();
        bad.views[0].time = 0.5;
        assert!(bad.validate(2).is_err());
        assert!(ok.validate(4).is_err());
    }

    proptest! {
        #[test]
        fn patch_codec_is_exact_inverse(
            p in 1usize..4, gh in 1usize..5, gw in 1usize..5, seed in any::<u64>()
        ) {
            let mut state = seed;
            let img = Array3::from_shape_simple_fn((3, gh * p, gw * p), || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64) * 2.0 - 1.0
            });
            let lat = patchify(&img, p).unwrap();
            prop_assert_eq!(&unpatchify(&lat, p).unwrap(), &img);
            prop_assert_eq!(&patchify(&unpatchify(&lat, p).unwrap(), p).unwrap(), &lat);
        }
    }
}
