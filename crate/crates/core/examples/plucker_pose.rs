//! Camera poses as Plücker ray maps: build one from an orbit camera, check
//! its constraints, normalize it into a latent and recover the pose again,
//! with and without noise on the rays.
//!
//!     cargo run --release --example plucker_pose

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use seqflow::synthgen::canonical_ray_stats;
use seqflow::viewcodec::{orbit_pose, pose_from_raymap, rays_from_pose, LatentCodec};

fn main() -> seqflow::Result<()> {
    let grid = (16, 16);
    let fov = 0.9;
    let pose = orbit_pose(35.0, 20.0, 2.5, fov, grid)?;
    let rays = rays_from_pose(&pose)?;
    let (unit, ortho) = rays.constraint_residuals();
    println!("camera center {:.3?}", pose.center.as_slice());
    println!("constraints: | |d| - 1 | <= {unit:.1e}, |m.d| <= {ortho:.1e}");

    let codec = LatentCodec::new(2, canonical_ray_stats(fov, grid)?)?;
    let latent = codec.encode_pose::<f64>(&pose)?;
    println!("ray latent shape {:?}, mean {:.3}", latent.dim(), latent.mean().unwrap());

    let back = pose_from_raymap(&codec.decode_rays(&latent)?, fov)?;
    println!(
        "exact round trip: rotation err {:.1e}, center err {:.1e}",
        (back.rotation - pose.rotation).amax(),
        (back.center - pose.center).amax()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for sigma in [1e-3, 1e-2, 5e-2] {
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut noisy = rays.clone();
        for v in noisy.moments.iter_mut().chain(noisy.directions.iter_mut()) {
            *v += Vector3::from_fn(|_, _| noise.sample(&mut rng));
        }
        let est = pose_from_raymap(&noisy, fov)?;
        println!("ray noise {sigma:.0e}: center off by {:.2e}", (est.center - pose.center).norm());
    }
    Ok(())
}
