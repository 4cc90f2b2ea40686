use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array3, Ix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ogen;
use super::scene::{box_blur, encode_depth, encode_mask, make_scene, random_background, render, Scene};
use crate::error::{Error, Result};
use crate::viewcodec::{
    build_prompt, orbit_pose, rays_from_pose, Binding, CameraPose, LatentCodec, RayStats, Role, Task,
    TaskPrompt, View, ViewKind, ViewSequence,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const ORBIT_RADIUS: f64 = 2.5;
pub const DEFAULT_FOV_Y: f64 = 0.9;
pub const DEFAULT_RESOLUTION: usize = 32;
pub const DEFAULT_PATCH: usize = 2;
pub const MULTIVIEW_AZIMUTH: (f64, f64) = (-45.0, 60.0);
pub const MULTIVIEW_ELEVATION: (f64, f64) = (-15.0, 45.0);
pub const MULTIVIEW_CAMERAS: usize = 4;
pub const POSE_CAMERAS: usize = 3;
pub const BLUR_KERNEL: usize = 5;

/// What a stored grid depicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Content {
    Image,
    Blurred,
    Depth,
    Mask,
    Raymap,
}

impl Content {
    pub fn kind(self) -> ViewKind {
        match self {
            Content::Raymap => ViewKind::Raymap,
            _ => ViewKind::Image,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Content::Image => "image",
            Content::Blurred => "blurred",
            Content::Depth => "depth",
            Content::Mask => "mask",
            Content::Raymap => "raymap",
        }
    }
}

/// Generation parameters; the dataset bytes are a function of these alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub task: Task,
    pub n: usize,
    pub seed: u64,
    pub resolution: usize,
    pub patch: usize,
    pub fov_y: f64,
}

impl DatasetSpec {
    pub fn new(task: Task, n: usize, seed: u64, resolution: usize) -> Self {
        Self {
            task,
            n,
            seed,
            resolution,
            patch: DEFAULT_PATCH,
            fov_y: DEFAULT_FOV_Y,
        }
    }

    pub fn with_patch(mut self, patch: usize) -> Self {
        self.patch = patch;
        self
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.resolution / self.patch, self.resolution / self.patch)
    }

    fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.patch == 0 || self.resolution % self.patch != 0 {
            return Err(Error::invalid(format!(
                "resolution {} must be a positive multiple of the patch size {}",
                self.resolution, self.patch
            )));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::invalid("fov_y outside (0, pi)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEntry {
    pub rotation: [f64; 9],
    pub center: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub file: String,
    pub content: Content,
    pub kind: ViewKind,
    pub role: Role,
    /// Index into the record's poses.
    pub camera: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub index: usize,
    pub views: Vec<ViewEntry>,
    pub poses: Vec<PoseEntry>,
    pub prompt: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub task: Task,
    pub n: usize,
    pub seed: u64,
    pub resolution: usize,
    pub patch: usize,
    pub fov_y: f64,
    pub near: f64,
    pub far: f64,
    pub ray_stats: RayStats,
    pub records: Vec<RecordEntry>,
}

impl Manifest {
    pub fn codec(&self) -> Result<LatentCodec> {
        LatentCodec::new(self.patch, self.ray_stats)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordView {
    pub content: Content,
    pub role: Role,
    pub camera: usize,
    /// Pixel-space `3 × R × R` for image-like content, the normalized
    /// `6 × h × w` latent for ray maps.
    pub grid: Array3<f32>,
}

impl RecordView {
    pub fn kind(&self) -> ViewKind {
        self.content.kind()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub index: usize,
    pub views: Vec<RecordView>,
    pub poses: Vec<CameraPose>,
    pub prompt: TaskPrompt,
}

impl SampleRecord {
    /// Latent view sequence with the stored roles; every view is clean.
    pub fn sequence(&self, codec: &LatentCodec) -> Result<ViewSequence<f32>> {
        let views = self
            .views
            .iter()
            .map(|v| {
                let latent = match v.kind() {
                    ViewKind::Image => codec.encode_image(&v.grid)?,
                    ViewKind::Raymap => v.grid.clone(),
                };
                let mut view = View::condition(v.kind(), latent);
                view.role = v.role;
                Ok(view)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ViewSequence::new(views))
    }

    /// Index of the first view with the given role.
    pub fn first(&self, role: Role) -> Option<usize> {
        self.views.iter().position(|v| v.role == role)
    }
}

/// Ray statistics from a fixed spread of orbit cameras; independent of any
/// dataset seed so every dataset at a given grid shares them.
pub fn canonical_ray_stats(fov_y: f64, grid: (usize, usize)) -> Result<RayStats> {
    let mut maps = Vec::new();
    for az in (0..12).map(|k| k as f64 * 30.0) {
        for el in [-15.0, 0.0, 15.0, 30.0, 45.0] {
            maps.push(rays_from_pose(&orbit_pose(az, el, ORBIT_RADIUS, fov_y, grid)?)?);
        }
    }
    RayStats::from_raymaps(&maps)
}

/// Camera `k` of `n` on the multiview slice: azimuth and elevation ranges are
/// divided into equal steps.
pub fn multiview_angles(k: usize, n: usize) -> (f64, f64) {
    let f = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
    let lerp = |(a, b): (f64, f64)| a + f * (b - a);
    (lerp(MULTIVIEW_AZIMUTH), lerp(MULTIVIEW_ELEVATION))
}

fn random_pose<R: Rng>(rng: &mut R, spec: &DatasetSpec) -> Result<CameraPose> {
    let az = rng.random_range(-180.0..180.0);
    let el = rng.random_range(MULTIVIEW_ELEVATION.0..MULTIVIEW_ELEVATION.1);
    orbit_pose(az, el, ORBIT_RADIUS, spec.fov_y, spec.grid())
}

fn to_f32(a: Array3<f64>) -> Array3<f32> {
    a.mapv(|v| v as f32)
}

struct Builder<'a> {
    spec: &'a DatasetSpec,
    codec: LatentCodec,
    views: Vec<RecordView>,
    poses: Vec<CameraPose>,
}

impl Builder<'_> {
    fn camera(&mut self, pose: CameraPose) -> usize {
        self.poses.push(pose);
        self.poses.len() - 1
    }

    fn push(&mut self, content: Content, role: Role, camera: usize, grid: Array3<f32>) {
        self.views.push(RecordView {
            content,
            role,
            camera,
            grid,
        });
    }

    fn push_rays(&mut self, role: Role, camera: usize) -> Result<()> {
        let latent = self.codec.encode_pose(&self.poses[camera])?;
        self.push(Content::Raymap, role, camera, latent);
        Ok(())
    }
}

fn task_salt(task: Task) -> u64 {
    Task::ALL.iter().position(|&t| t == task).expect("task") as u64 + 1
}

/// Builds record `index` of the dataset described by `spec`.
pub fn make_record(spec: &DatasetSpec, codec: LatentCodec, index: usize) -> Result<SampleRecord> {
    let scene = make_scene(spec.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ task_salt(spec.task).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index as u64);
    let res = spec.resolution;
    let caption = scene.caption();
    let mut b = Builder {
        spec,
        codec,
        views: Vec::new(),
        poses: Vec::new(),
    };
    let task = spec.task;

    let two_view = |b: &mut Builder, rng: &mut ChaCha8Rng, target: Content, cond: Content| -> Result<()> {
        let cam = b.camera(random_pose(rng, b.spec)?);
        let out = render(&scene, &b.poses[cam], res);
        let grid_of = |c: Content| match c {
            Content::Image => out.image.clone(),
            Content::Blurred => box_blur(&out.image, BLUR_KERNEL),
            Content::Depth => encode_depth(&out.depth),
            Content::Mask => encode_mask(&scene, &out.hit),
            Content::Raymap => unreachable!("ray maps are not rendered"),
        };
        b.push(target, Role::Target, cam, to_f32(grid_of(target)));
        b.push(cond, Role::Condition, cam, to_f32(grid_of(cond)));
        Ok(())
    };

    let mut bindings = Vec::new();
    let mut captions = vec![caption.clone()];
    let mut markers = 0;
    match task {
        Task::Text2image => {
            let cam = b.camera(random_pose(&mut rng, spec)?);
            let out = render(&scene, &b.poses[cam], res);
            b.push(Content::Image, Role::Target, cam, to_f32(out.image));
        }
        Task::Img2imgDeblur => two_view(&mut b, &mut rng, Content::Image, Content::Blurred)?,
        Task::Image2depth => two_view(&mut b, &mut rng, Content::Depth, Content::Image)?,
        Task::Depth2image => two_view(&mut b, &mut rng, Content::Image, Content::Depth)?,
        Task::Semantic2image | Task::Image2semantic => {
            bindings = scene
                .primitives
                .iter()
                .map(|p| Binding {
                    rgb: p.mask_rgb,
                    class_name: p.class_name().to_string(),
                })
                .collect();
            if task == Task::Semantic2image {
                two_view(&mut b, &mut rng, Content::Image, Content::Mask)?;
            } else {
                two_view(&mut b, &mut rng, Content::Mask, Content::Image)?;
            }
        }
        Task::Faceid => {
            let n_views = rng.random_range(2..=4);
            for k in 0..n_views {
                let cam = b.camera(random_pose(&mut rng, spec)?);
                let restyled = Scene {
                    background: if k == 0 { scene.background } else { random_background(&mut rng) },
                    ..scene.clone()
                };
                let role = if k == 0 { Role::Target } else { Role::Condition };
                b.push(Content::Image, role, cam, to_f32(render(&restyled, &b.poses[cam], res).image));
            }
            markers = n_views - 1;
            captions = vec![caption.clone(); markers];
        }
        Task::Multiview => {
            for k in 0..MULTIVIEW_CAMERAS {
                let (az, el) = multiview_angles(k, MULTIVIEW_CAMERAS);
                let cam = b.camera(orbit_pose(az, el, ORBIT_RADIUS, spec.fov_y, spec.grid())?);
                let role = if k == 0 { Role::Condition } else { Role::Target };
                b.push(Content::Image, role, cam, to_f32(render(&scene, &b.poses[cam], res).image));
                b.push_rays(Role::Condition, cam)?;
            }
            markers = 1;
        }
        Task::PoseEstimation => {
            for _ in 0..POSE_CAMERAS {
                let cam = b.camera(random_pose(&mut rng, spec)?);
                b.push(Content::Image, Role::Condition, cam, to_f32(render(&scene, &b.poses[cam], res).image));
                b.push_rays(Role::Target, cam)?;
            }
        }
    }
    let prompt = build_prompt(task, &captions, &bindings, markers)?;
    Ok(SampleRecord {
        index,
        views: b.views,
        poses: b.poses,
        prompt,
    })
}

fn pose_entry(p: &CameraPose) -> PoseEntry {
    PoseEntry {
        rotation: p.rotation_row_major(),
        center: [p.center.x, p.center.y, p.center.z],
    }
}

fn pose_from_entry(e: &PoseEntry, fov_y: f64, grid: (usize, usize)) -> Result<CameraPose> {
    CameraPose::new(
        Matrix3::from_row_slice(&e.rotation),
        Vector3::from(e.center),
        fov_y,
        grid,
    )
}

fn file_name(index: usize, view: usize, content: Content) -> String {
    format!("{index:06}_{view}_{}.ogen", content.as_str())
}

/// Generates `spec.n` records and writes them with a manifest into `out_dir`.
pub fn make_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let ray_stats = canonical_ray_stats(spec.fov_y, spec.grid())?;
    let codec = LatentCodec::new(spec.patch, ray_stats)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records = (0..spec.n)
        .into_par_iter()
        .map(|i| make_record(spec, codec, i))
        .collect::<Result<Vec<_>>>()?;

    let mut entries = Vec::with_capacity(records.len());
    for rec in &records {
        let mut views = Vec::with_capacity(rec.views.len());
        for (k, v) in rec.views.iter().enumerate() {
            let file = file_name(rec.index, k, v.content);
            ogen::write_grid(&out_dir.join(&file), &v.grid.clone().into_dyn())?;
            views.push(ViewEntry {
                file,
                content: v.content,
                kind: v.kind(),
                role: v.role,
                camera: v.camera,
            });
        }
        entries.push(RecordEntry {
            index: rec.index,
            views,
            poses: rec.poses.iter().map(pose_entry).collect(),
            prompt: rec.prompt.to_strings(),
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        task: spec.task,
        n: spec.n,
        seed: spec.seed,
        resolution: spec.resolution,
        patch: spec.patch,
        fov_y: spec.fov_y,
        near: super::scene::NEAR_DEPTH,
        far: super::scene::FAR_DEPTH,
        ray_stats,
        records: entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A dataset loaded fully into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported manifest version {}",
                path.display(),
                manifest.version
            )));
        }
        let grid = (manifest.resolution / manifest.patch.max(1), manifest.resolution / manifest.patch.max(1));
        let records = manifest
            .records
            .par_iter()
            .map(|entry| {
                let poses = entry
                    .poses
                    .iter()
                    .map(|p| pose_from_entry(p, manifest.fov_y, grid))
                    .collect::<Result<Vec<_>>>()?;
                let views = entry
                    .views
                    .iter()
                    .map(|v| {
                        let g = ogen::read_grid(&dir.join(&v.file))?
                            .into_dimensionality::<Ix3>()
                            .map_err(|_| Error::Format(format!("{}: expected a 3-D grid", v.file)))?;
                        let want = match v.kind {
                            ViewKind::Image => (3, manifest.resolution, manifest.resolution),
                            ViewKind::Raymap => (6, grid.0, grid.1),
                        };
                        if g.dim() != want || v.camera >= poses.len() {
                            return Err(Error::Format(format!("{}: unexpected grid shape {:?}", v.file, g.dim())));
                        }
                        Ok(RecordView {
                            content: v.content,
                            role: v.role,
                            camera: v.camera,
                            grid: g,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(SampleRecord {
                    index: entry.index,
                    views,
                    poses,
                    prompt: TaskPrompt::from_strings(&entry.prompt)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            records,
        })
    }

    pub fn codec(&self) -> Result<LatentCodec> {
        self.manifest.codec()
    }

    pub fn task(&self) -> Task {
        self.manifest.task
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::viewcodec::{latent_to_raymap, COLOR_WORDS, SHAPE_WORDS};

    #[test]
    fn view_layouts_per_task() {
        let spec = |t| DatasetSpec::new(t, 1, 0, 16);
        let codec = |s: &DatasetSpec| LatentCodec::new(s.patch, canonical_ray_stats(s.fov_y, s.grid()).unwrap()).unwrap();
        let s = spec(Task::Image2depth);
        let r = make_record(&s, codec(&s), 0).unwrap();
        assert_eq!(r.views.len(), 2);
        assert_eq!((r.views[0].content, r.views[0].role), (Content::Depth, Role::Target));
        assert_eq!((r.views[1].content, r.views[1].role), (Content::Image, Role::Condition));

        let s = spec(Task::Multiview);
        let r = make_record(&s, codec(&s), 0).unwrap();
        assert_eq!(r.views.iter().filter(|v| v.content == Content::Image).count(), 4);
        assert_eq!(r.views.iter().filter(|v| v.content == Content::Raymap).count(), 4);
        assert_eq!(r.poses.len(), 4);
        for (k, p) in r.poses.iter().enumerate() {
            let (az, el) = multiview_angles(k, 4);
            let want = orbit_pose(az, el, ORBIT_RADIUS, s.fov_y, s.grid()).unwrap();
            assert!((p.center - want.center).norm() < 1e-12);
        }

        for t in Task::ALL {
            let s = spec(t);
            let r = make_record(&s, codec(&s), 3).unwrap();
            assert!(r.views.iter().any(|v| v.role == Role::Target), "{t}");
            assert_eq!(r.prompt.task_token(), Some(t.token()));
            let seq = r.sequence(&codec(&s)).unwrap();
            seq.validate(s.patch).unwrap();
        }
    }

    #[test]
    fn multiview_slicing_of_eight() {
        let az: Vec<f64> = (0..8).map(|k| multiview_angles(k, 8).0).collect();
        for (a, e) in az.iter().zip([-45.0, -30.0, -15.0, 0.0, 15.0, 30.0, 45.0, 60.0]) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn record_invariants() {
        for t in [Task::Image2semantic, Task::PoseEstimation, Task::Faceid] {
            let s = DatasetSpec::new(t, 1, 7, 16);
            let c = LatentCodec::new(s.patch, canonical_ray_stats(s.fov_y, s.grid()).unwrap()).unwrap();
            for i in 0..20 {
                let r = make_record(&s, c, i).unwrap();
                let scene = make_scene(7, i as u64);
                let words = r.prompt.words().collect::<Vec<_>>();
                for pair in words.chunks(2) {
                    let color = COLOR_WORDS.iter().position(|w| *w == pair[0]).unwrap();
                    assert!(SHAPE_WORDS.contains(&pair[1]));
                    assert!(scene.primitives.iter().any(|p| p.color == color && p.shape.word() == pair[1]));
                }
                for v in &r.views {
                    assert!(v.grid.iter().all(|x| x.is_finite() && x.abs() <= 1.0 + 1e-6 || v.content == Content::Raymap));
                    if v.content == Content::Raymap {
                        let rays = latent_to_raymap(&v.grid, &c.ray_stats).unwrap();
                        let (dn, md) = rays.constraint_residuals();
                        assert!(dn < 1e-5 && md < 1e-5);
                    }
                }
                if t == Task::Faceid {
                    assert!((2..=4).contains(&r.views.len()));
                    assert_eq!(r.prompt.to_strings().iter().filter(|s| s.starts_with("[[img")).count(), r.views.len() - 1);
                }
            }
        }
    }

    #[test]
    fn depth_mask_consistency() {
        let scene = make_scene(2, 9);
        let s = DatasetSpec::new(Task::Image2depth, 1, 2, 24);
        let pose = orbit_pose(30.0, 20.0, ORBIT_RADIUS, s.fov_y, s.grid()).unwrap();
        let out = render(&scene, &pose, 24);
        for ((d, c), h) in out.depth.iter().zip(&out.class_ids).zip(&out.hit) {
            assert_eq!(*c != 0, *d < super::super::scene::FAR_DEPTH);
            assert_eq!(h.is_some(), *c != 0);
            assert!(*d > 0.0);
        }
    }

    #[test]
    fn writes_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec::new(Task::PoseEstimation, 3, 1, 16).with_patch(4);
        let m = make_dataset(&spec, dir.path()).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.manifest, m);
        let codec = ds.codec().unwrap();
        for (i, r) in ds.records.iter().enumerate() {
            let fresh = make_record(&spec, codec, i).unwrap();
            assert_eq!(r.views, fresh.views);
            assert_eq!(r.prompt, fresh.prompt);
            for (a, b) in r.poses.iter().zip(&fresh.poses) {
                assert!((a.rotation - b.rotation).amax() == 0.0 && a.center == b.center);
            }
        }
        let bad = dir.path().join("missing");
        assert!(matches!(Dataset::load(&bad), Err(Error::Io { .. })));
    }
}
