use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::viewcodec::{camera_direction, CameraPose, CLASS_NAMES, COLOR_WORDS, SHAPE_WORDS};

/// Depth assigned to pixels that hit nothing.
pub const FAR_DEPTH: f64 = 10.0;
/// Lower end of the depth range mapped into image values.
pub const NEAR_DEPTH: f64 = 0.5;
pub const MAX_PRIMITIVES: usize = 4;

/// Surface colors, indexed like `COLOR_WORDS`, in `[0, 1]`.
pub const PALETTE: [[f64; 3]; 8] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.75, 0.20],
    [0.15, 0.30, 0.95],
    [0.95, 0.90, 0.10],
    [0.10, 0.85, 0.90],
    [0.90, 0.15, 0.85],
    [0.95, 0.95, 0.95],
    [1.00, 0.55, 0.05],
];

/// Mask colors handed out to bindings.
pub const MASK_COLORS: [[u8; 3]; 8] = [
    [0xFF, 0x00, 0x00],
    [0x00, 0xFF, 0x00],
    [0x00, 0x00, 0xFF],
    [0xFF, 0xFF, 0x00],
    [0x00, 0xFF, 0xFF],
    [0xFF, 0x00, 0xFF],
    [0xFF, 0xFF, 0xFF],
    [0xFF, 0x80, 0x00],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere,
    /// Axis-aligned cube; `size` is the half edge.
    Box,
}

impl Shape {
    pub fn word(self) -> &'static str {
        match self {
            Shape::Sphere => SHAPE_WORDS[0],
            Shape::Box => SHAPE_WORDS[1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f64; 3],
    pub size: f64,
    /// Index into `COLOR_WORDS` / `PALETTE`.
    pub color: usize,
    /// 1-based class id; 0 is background.
    pub class_id: u8,
    pub mask_rgb: [u8; 3],
}

impl Primitive {
    pub fn rgb(&self) -> [f64; 3] {
        PALETTE[self.color]
    }

    pub fn class_name(&self) -> &'static str {
        CLASS_NAMES[self.class_id as usize - 1]
    }

    /// Distance along the unit ray `origin + t·dir` to the first surface hit
    /// in front of the origin.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let c = Vector3::from(self.center);
        match self.shape {
            Shape::Sphere => {
                let oc = origin - c;
                let b = dir.dot(&oc);
                let disc = b * b - (oc.norm_squared() - self.size * self.size);
                if disc < 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                [-b - root, -b + root].into_iter().find(|&t| t > 0.0)
            }
            Shape::Box => {
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    let (a, b) = (c[k] - self.size - origin[k], c[k] + self.size - origin[k]);
                    if dir[k] == 0.0 {
                        if a > 0.0 || b < 0.0 {
                            return None;
                        }
                        continue;
                    }
                    let (t0, t1) = (a / dir[k], b / dir[k]);
                    lo = lo.max(t0.min(t1));
                    hi = hi.min(t0.max(t1));
                }
                if hi < lo || hi <= 0.0 {
                    return None;
                }
                Some(if lo > 0.0 { lo } else { hi })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    /// Background color in `[0, 1]`.
    pub background: [f64; 3],
}

impl Scene {
    /// `color shape` word pairs, one per primitive.
    pub fn caption(&self) -> Vec<String> {
        self.primitives
            .iter()
            .flat_map(|p| [COLOR_WORDS[p.color].to_string(), p.shape.word().to_string()])
            .collect()
    }
}

pub(crate) fn random_background<R: Rng>(rng: &mut R) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(0.05..0.55))
}

/// Deterministic scene for `(seed, index)`.
pub fn make_scene(seed: u64, index: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let count = rng.random_range(1..=MAX_PRIMITIVES);
    let mut classes: Vec<u8> = (1..=CLASS_NAMES.len() as u8).collect();
    classes.shuffle(&mut rng);
    let mut masks: Vec<usize> = (0..MASK_COLORS.len()).collect();
    masks.shuffle(&mut rng);
    let primitives = (0..count)
        .map(|k| {
            let shape = if rng.random_bool(0.5) { Shape::Sphere } else { Shape::Box };
            let size = match shape {
                Shape::Sphere => rng.random_range(0.2..0.45),
                Shape::Box => rng.random_range(0.15..0.32),
            };
            Primitive {
                shape,
                center: [0; 3].map(|_| rng.random_range(-0.6..0.6)),
                size,
                color: rng.random_range(0..PALETTE.len()),
                class_id: classes[k],
                mask_rgb: MASK_COLORS[masks[k]],
            }
        })
        .collect();
    Scene {
        primitives,
        background: random_background(&mut rng),
    }
}

/// Per-pixel outputs of [`render`].
#[derive(Debug, Clone, PartialEq)]
pub struct Render {
    /// `3 × H × W` in `[−1, 1]`.
    pub image: Array3<f64>,
    /// Ray distance to the hit, [`FAR_DEPTH`] where nothing is hit.
    pub depth: Array2<f64>,
    /// Class id of the visible primitive, 0 for background.
    pub class_ids: Array2<u8>,
    /// Index of the visible primitive.
    pub hit: Array2<Option<u8>>,
}

/// Casts one ray per pixel center and keeps the nearest analytic hit.
pub fn render(scene: &Scene, pose: &CameraPose, resolution: usize) -> Render {
    let grid = (resolution, resolution);
    let mut image = Array3::zeros((3, resolution, resolution));
    let mut depth = Array2::from_elem(grid, FAR_DEPTH);
    let mut class_ids = Array2::zeros(grid);
    let mut hit = Array2::from_elem(grid, None);
    for r in 0..resolution {
        for c in 0..resolution {
            let dir = pose.rotation * camera_direction(r, c, grid, pose.fov_y);
            let nearest = scene
                .primitives
                .iter()
                .enumerate()
                .filter_map(|(i, p)| p.intersect(&pose.center, &dir).map(|t| (i, t)))
                .filter(|&(_, t)| t < FAR_DEPTH)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let rgb = match nearest {
                Some((i, t)) => {
                    depth[[r, c]] = t;
                    class_ids[[r, c]] = scene.primitives[i].class_id;
                    hit[[r, c]] = Some(i as u8);
                    scene.primitives[i].rgb()
                }
                None => scene.background,
            };
            for k in 0..3 {
                image[[k, r, c]] = 2.0 * rgb[k] - 1.0;
            }
        }
    }
    Render {
        image,
        depth,
        class_ids,
        hit,
    }
}

/// Depth replicated into three channels, mapped affinely from
/// `[NEAR_DEPTH, FAR_DEPTH]` onto `[−1, 1]`.
pub fn encode_depth(depth: &Array2<f64>) -> Array3<f64> {
    let (h, w) = depth.dim();
    Array3::from_shape_fn((3, h, w), |(_, r, c)| {
        2.0 * (depth[[r, c]] - NEAR_DEPTH) / (FAR_DEPTH - NEAR_DEPTH) - 1.0
    })
}

/// Inverse of [`encode_depth`], averaging the channels.
pub fn decode_depth(image: &Array3<f64>) -> Array2<f64> {
    let (ch, h, w) = image.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let v = (0..ch).map(|k| image[[k, r, c]]).sum::<f64>() / ch as f64;
        NEAR_DEPTH + (v + 1.0) * 0.5 * (FAR_DEPTH - NEAR_DEPTH)
    })
}

/// Mask image: each pixel takes its primitive's binding color, black
/// background, values in `[−1, 1]`.
pub fn encode_mask(scene: &Scene, hit: &Array2<Option<u8>>) -> Array3<f64> {
    let (h, w) = hit.dim();
    Array3::from_shape_fn((3, h, w), |(k, r, c)| match hit[[r, c]] {
        Some(i) => 2.0 * scene.primitives[i as usize].mask_rgb[k] as f64 / 255.0 - 1.0,
        None => -1.0,
    })
}

/// `k × k` box blur with edge clamping, per channel.
pub fn box_blur(image: &Array3<f64>, k: usize) -> Array3<f64> {
    let (ch, h, w) = image.dim();
    let half = (k / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    Array3::from_shape_fn((ch, h, w), |(z, r, c)| {
        let mut s = 0.0;
        for dy in -half..=half {
            for dx in -half..=half {
                s += image[[z, clamp(r as isize + dy, h), clamp(c as isize + dx, w)]];
            }
        }
        s / (k * k) as f64
    })
}
