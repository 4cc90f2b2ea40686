use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::RAYMAP_CHANNELS;
use crate::error::{Error, Result};
use crate::real::Real;

/// Pinhole camera: camera-to-world rotation, world-space center, vertical
/// field of view and the patch grid its ray map is sampled on.
///
/// Camera frame is x right, y down, z forward.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
    pub fov_y: f64,
    pub grid: (usize, usize),
}

impl CameraPose {
    pub fn new(
        rotation: Matrix3<f64>,
        center: Vector3<f64>,
        fov_y: f64,
        grid: (usize, usize),
    ) -> Result<Self> {
        let pose = Self {
            rotation,
            center,
            fov_y,
            grid,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::invalid(format!("fov_y {} outside (0, pi)", self.fov_y)));
        }
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(Error::invalid("camera grid must be non-empty"));
        }
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if ortho > 1e-9 || (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("rotation is not a proper orthonormal matrix"));
        }
        Ok(())
    }

    /// Rotation in row-major order.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
        ]
    }

    /// Expresses this pose in the frame of `reference` (reference becomes
    /// identity rotation at the origin).
    pub fn relative_to(&self, reference: &CameraPose) -> CameraPose {
        let rt = reference.rotation.transpose();
        CameraPose {
            rotation: rt * self.rotation,
            center: rt * (self.center - reference.center),
            fov_y: self.fov_y,
            grid: self.grid,
        }
    }
}

/// Unit camera-frame direction through the center of cell `(row, col)` of
/// an `h × w` grid.
pub fn camera_direction(row: usize, col: usize, grid: (usize, usize), fov_y: f64) -> Vector3<f64> {
    let (h, w) = grid;
    let tan_half = (0.5 * fov_y).tan();
    let aspect = w as f64 / h as f64;
    let x = ((col as f64 + 0.5) / w as f64 * 2.0 - 1.0) * tan_half * aspect;
    let y = ((row as f64 + 0.5) / h as f64 * 2.0 - 1.0) * tan_half;
    Vector3::new(x, y, 1.0).normalize()
}

/// Camera at `center` looking at `target` with world `up` (y-up world).
pub fn look_at(
    center: Vector3<f64>,
    target: Vector3<f64>,
    up: Vector3<f64>,
    fov_y: f64,
    grid: (usize, usize),
) -> Result<CameraPose> {
    let forward = (target - center)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::invalid("look_at target coincides with center"))?;
    let right = forward
        .cross(&up)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::invalid("look_at up vector parallel to view direction"))?;
    let down = forward.cross(&right);
    let rotation = Matrix3::from_columns(&[right, down, forward]);
    CameraPose::new(rotation, center, fov_y, grid)
}

/// Pose on a sphere of `radius` around the origin, looking at the origin.
/// Angles in degrees; azimuth 0 and elevation 0 sit on the +z axis.
pub fn orbit_pose(
    azimuth_deg: f64,
    elevation_deg: f64,
    radius: f64,
    fov_y: f64,
    grid: (usize, usize),
) -> Result<CameraPose> {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let center = radius * Vector3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
    look_at(center, Vector3::zeros(), Vector3::y(), fov_y, grid)
}

/// Per-cell Plücker coordinates `(m, d)` with `m = o × d`, row-major cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerRayMap {
    pub grid: (usize, usize),
    pub moments: Vec<Vector3<f64>>,
    pub directions: Vec<Vector3<f64>>,
}

impl PluckerRayMap {
    /// `(max |‖d‖ − 1|, max |m·d|)` over all cells.
    pub fn constraint_residuals(&self) -> (f64, f64) {
        self.moments
            .iter()
            .zip(&self.directions)
            .fold((0.0f64, 0.0f64), |(n, o), (m, d)| {
                (n.max((d.norm() - 1.0).abs()), o.max(m.dot(d).abs()))
            })
    }

    /// Raw `6 × h × w` array, moment channels first.
    pub fn to_array(&self) -> Array3<f64> {
        let (h, w) = self.grid;
        let mut out = Array3::zeros((RAYMAP_CHANNELS, h, w));
        for (i, (m, d)) in self.moments.iter().zip(&self.directions).enumerate() {
            let (r, c) = (i / w, i % w);
            for k in 0..3 {
                out[[k, r, c]] = m[k];
                out[[3 + k, r, c]] = d[k];
            }
        }
        out
    }

    pub fn from_array(a: &Array3<f64>) -> Result<Self> {
        let (c, h, w) = a.dim();
        if c != RAYMAP_CHANNELS {
            return Err(Error::invalid(format!("ray map needs 6 channels, got {c}")));
        }
        let mut moments = Vec::with_capacity(h * w);
        let mut directions = Vec::with_capacity(h * w);
        for r in 0..h {
            for col in 0..w {
                moments.push(Vector3::new(a[[0, r, col]], a[[1, r, col]], a[[2, r, col]]));
                directions.push(Vector3::new(a[[3, r, col]], a[[4, r, col]], a[[5, r, col]]));
            }
        }
        Ok(Self {
            grid: (h, w),
            moments,
            directions,
        })
    }
}

/// Ray map of every cell center of `pose`.
pub fn rays_from_pose(pose: &CameraPose) -> Result<PluckerRayMap> {
    pose.validate()?;
    let (h, w) = pose.grid;
    let mut moments = Vec::with_capacity(h * w);
    let mut directions = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let d = (pose.rotation * camera_direction(r, c, pose.grid, pose.fov_y)).normalize();
            moments.push(pose.center.cross(&d));
            directions.push(d);
        }
    }
    Ok(PluckerRayMap {
        grid: pose.grid,
        moments,
        directions,
    })
}

/// Per-channel affine normalization constants for ray-map latents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayStats {
    pub mean: [f64; RAYMAP_CHANNELS],
    pub std: [f64; RAYMAP_CHANNELS],
}

impl RayStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; RAYMAP_CHANNELS],
            std: [1.0; RAYMAP_CHANNELS],
        }
    }

    /// Channelwise mean and population standard deviation over `maps`.
    pub fn from_raymaps(maps: &[PluckerRayMap]) -> Result<Self> {
        let mut sum = [0.0f64; RAYMAP_CHANNELS];
        let mut sq = [0.0f64; RAYMAP_CHANNELS];
        let mut n = 0usize;
        for map in maps {
            for (m, d) in map.moments.iter().zip(&map.directions) {
                for k in 0..3 {
                    sum[k] += m[k];
                    sq[k] += m[k] * m[k];
                    sum[3 + k] += d[k];
                    sq[3 + k] += d[k] * d[k];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::invalid("ray statistics need at least one ray"));
        }
        let mut stats = Self::identity();
        for k in 0..RAYMAP_CHANNELS {
            let mean = sum[k] / n as f64;
            stats.mean[k] = mean;
            stats.std[k] = (sq[k] / n as f64 - mean * mean).max(0.0).sqrt();
        }
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("ray statistics contain a non-positive std"));
        }
        Ok(())
    }
}

/// Stacks `(m, d)` into 6 channels and normalizes each to unit variance.
pub fn raymap_to_latent<F: Real>(rays: &PluckerRayMap, stats: &RayStats) -> Result<Array3<F>> {
    stats.validate()?;
    let raw = rays.to_array();
    let mut out = Array3::zeros(raw.raw_dim());
    for ((k, r, c), &v) in raw.indexed_iter() {
        out[[k, r, c]] = F::of((v - stats.mean[k]) / stats.std[k]);
    }
    Ok(out)
}

/// Inverse of [`raymap_to_latent`]; does not re-impose Plücker constraints.
pub fn latent_to_raymap<F: Real>(latent: &Array3<F>, stats: &RayStats) -> Result<PluckerRayMap> {
    stats.validate()?;
    let mut raw = Array3::zeros(latent.raw_dim());
    for ((k, r, c), &v) in latent.indexed_iter() {
        if k >= RAYMAP_CHANNELS {
            return Err(Error::invalid("ray latent has more than 6 channels"));
        }
        raw[[k, r, c]] = v.as_f64() * stats.std[k] + stats.mean[k];
    }
    PluckerRayMap::from_array(&raw)
}

/// Least-squares camera recovery from a (possibly noisy) ray map.
///
/// Rotation: orthogonal Procrustes between the re-normalized world
/// directions and the known camera-frame pinhole directions, with a
/// determinant correction. Center: least-squares solution of `c × dᵢ = mᵢ`,
/// i.e. `Σ(I − dᵢdᵢᵀ) c = Σ dᵢ × mᵢ`.
pub fn pose_from_raymap(rays: &PluckerRayMap, fov_y: f64) -> Result<CameraPose> {
    if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
        return Err(Error::invalid(format!("fov_y {fov_y} outside (0, pi)")));
    }
    let (h, w) = rays.grid;
    if h * w == 0 || rays.directions.len() != h * w || rays.moments.len() != h * w {
        return Err(Error::invalid("ray map size does not match its grid"));
    }

    let mut cross_cov = Matrix3::zeros();
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (i, (m, d_raw)) in rays.moments.iter().zip(&rays.directions).enumerate() {
        let d = d_raw
            .try_normalize(1e-12)
            .ok_or_else(|| Error::DegenerateGeometry(format!("ray {i} has zero direction")))?;
        let d_cam = camera_direction(i / w, i % w, rays.grid, fov_y);
        cross_cov += d * d_cam.transpose();
        normal += Matrix3::identity() - d * d.transpose();
        rhs += d.cross(m);
    }

    let svd = cross_cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let rotation = u * fix * v_t;

    let eig = SymmetricEigen::new(normal);
    let (min, max) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    if !(max > 0.0) || min <= 1e-10 * max {
        return Err(Error::DegenerateGeometry(
            "ray directions are parallel; camera center is unobservable".into(),
        ));
    }
    let center = normal
        .cholesky()
        .ok_or_else(|| Error::DegenerateGeometry("center system not positive definite".into()))?
        .solve(&rhs);

    CameraPose::new(rotation, center, fov_y, rays.grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn random_pose(rng: &mut ChaCha8Rng, grid: (usize, usize)) -> CameraPose {
        let axis = Unit::new_normalize(Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ));
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let rotation = Rotation3::from_axis_angle(&axis, angle).into_inner();
        let center = Vector3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        CameraPose::new(rotation, center, rng.random_range(0.4..1.4), grid).unwrap()
    }

    #[test]
    fn origin_camera_has_zero_moments() {
        let pose = CameraPose::new(Matrix3::identity(), Vector3::zeros(), 0.8, (4, 4)).unwrap();
        let rays = rays_from_pose(&pose).unwrap();
        assert!(rays.moments.iter().all(|m| m.norm() == 0.0));
    }

    #[test]
    fn moment_cross_product_arithmetic() {
        let o = Vector3::new(1.0, 0.0, 0.0);
        let d = Vector3::new(0.0, 0.0, 1.0);
        assert_eq!(o.cross(&d), Vector3::new(0.0, -1.0, 0.0));
    }

    #[test]
    fn generated_rays_satisfy_plucker_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let pose = random_pose(&mut rng, (8, 6));
            let (norm, ortho) = rays_from_pose(&pose).unwrap().constraint_residuals();
            assert!(norm <= 1e-12 && ortho <= 1e-12, "{norm} {ortho}");
        }
    }

    #[test]
    fn pose_validation() {
        let bad = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(CameraPose::new(bad, Vector3::zeros(), 0.8, (4, 4)).is_err());
        assert!(CameraPose::new(Matrix3::identity(), Vector3::zeros(), 0.0, (4, 4)).is_err());
        assert!(CameraPose::new(Matrix3::identity(), Vector3::zeros(), 3.2, (4, 4)).is_err());
    }

    #[test]
    fn identity_pose_recovered() {
        let pose = CameraPose::new(Matrix3::identity(), Vector3::zeros(), 0.9, (8, 8)).unwrap();
        let got = pose_from_raymap(&rays_from_pose(&pose).unwrap(), 0.9).unwrap();
        assert!((got.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(got.center.norm() < 1e-12);
    }

    #[test]
    fn round_trip_random_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let pose = random_pose(&mut rng, (8, 8));
            let got = pose_from_raymap(&rays_from_pose(&pose).unwrap(), pose.fov_y).unwrap();
            assert!((got.rotation - pose.rotation).amax() <= 1e-6);
            assert!((got.center - pose.center).norm() <= 1e-6);
        }
    }

    #[test]
    fn parallel_rays_are_degenerate() {
        let rays = PluckerRayMap {
            grid: (2, 2),
            moments: vec![Vector3::zeros(); 4],
            directions: vec![Vector3::z(); 4],
        };
        assert!(matches!(
            pose_from_raymap(&rays, 0.8),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn latent_scaling_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let maps: Vec<_> = (0..8)
            .map(|_| rays_from_pose(&random_pose(&mut rng, (4, 4))).unwrap())
            .collect();
        let stats = RayStats::from_raymaps(&maps).unwrap();
        let lat: Array3<f64> = raymap_to_latent(&maps[0], &stats).unwrap();
        let back = latent_to_raymap(&lat, &stats).unwrap();
        for (a, b) in back.moments.iter().zip(&maps[0].moments) {
            assert!((a - b).norm() <= 1e-9);
        }
        for (a, b) in back.directions.iter().zip(&maps[0].directions) {
            assert!((a - b).norm() <= 1e-9);
        }
        let ident: Array3<f64> = raymap_to_latent(&maps[0], &RayStats::identity()).unwrap();
        assert_eq!(ident, maps[0].to_array());
        let mut zero = stats;
        zero.std[2] = 0.0;
        assert!(raymap_to_latent::<f64>(&maps[0], &zero).is_err());
    }

    #[test]
    fn look_at_faces_target() {
        let pose = orbit_pose(30.0, 20.0, 2.5, 0.9, (4, 4)).unwrap();
        let forward = pose.rotation.column(2).into_owned();
        let to_origin = (-pose.center).normalize();
        assert!((forward - to_origin).norm() < 1e-12);
        assert!((pose.center.norm() - 2.5).abs() < 1e-12);
        let rel = pose.relative_to(&pose);
        assert!((rel.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(rel.center.norm() < 1e-12);
    }
}
