//! Procedural ground truth: random primitive scenes, an analytic ray caster,
//! per-task sample records and their on-disk dataset format.

mod dataset;
pub mod ogen;
mod scene;

pub use dataset::{
    canonical_ray_stats, make_dataset, make_record, multiview_angles, Content, Dataset, DatasetSpec,
    Manifest, PoseEntry, RecordEntry, RecordView, SampleRecord, ViewEntry, BLUR_KERNEL, DEFAULT_FOV_Y,
    DEFAULT_PATCH, DEFAULT_RESOLUTION, MANIFEST_FILE, MULTIVIEW_AZIMUTH, MULTIVIEW_CAMERAS,
    MULTIVIEW_ELEVATION, ORBIT_RADIUS, POSE_CAMERAS,
};
pub use scene::{
    box_blur, decode_depth, encode_depth, encode_mask, make_scene, render, Primitive, Render, Scene,
    Shape, FAR_DEPTH, MASK_COLORS, MAX_PRIMITIVES, NEAR_DEPTH, PALETTE,
};
