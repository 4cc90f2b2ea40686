//! Property tests over the public API.

use ndarray::{Array3, ArrayD, IxDyn};
use proptest::prelude::*;
use seqflow::flowpath::{interpolate, shift_time, velocity_target};
use seqflow::harness::psnr;
use seqflow::sampler::{cfg_combine, plan_multiview, time_grid, CameraSource, ANCHOR_COUNT};
use seqflow::synthgen::ogen;
use seqflow::viewcodec::{orbit_pose, pose_from_raymap, rays_from_pose};

fn grid(values: &[f64]) -> Array3<f64> {
    Array3::from_shape_vec((1, 1, values.len()), values.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn path_is_affine_in_time(
        xs in prop::collection::vec(-5.0f64..5.0, 6),
        es in prop::collection::vec(-5.0f64..5.0, 6),
        t in 0.0f64..=1.0,
    ) {
        let (x, e) = (grid(&xs), grid(&es));
        let xt = interpolate(&x, &e, t).unwrap();
        let u = velocity_target(&x, &e).unwrap();
        for ((a, b), c) in xt.iter().zip(&e).zip(&u) {
            prop_assert!((a - (b + t * c)).abs() <= 1e-12);
        }
    }

    #[test]
    fn shift_is_monotone_and_fixes_endpoints(a in 0.0f64..=1.0, b in 0.0f64..=1.0, s in 1.0f64..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (sl, sh) = (shift_time(lo, s).unwrap(), shift_time(hi, s).unwrap());
        prop_assert!(sl <= sh);
        prop_assert!((0.0..=1.0).contains(&sl) && (0.0..=1.0).contains(&sh));
        prop_assert_eq!(shift_time(0.0, s).unwrap(), 0.0);
        prop_assert_eq!(shift_time(1.0, s).unwrap(), 1.0);
    }

    #[test]
    fn time_grid_runs_from_noise_to_data(steps in 1usize..200, s in 1.0f64..5.0) {
        let g = time_grid(steps, s).unwrap();
        prop_assert_eq!(g.len(), steps + 1);
        prop_assert_eq!(g[0], 0.0);
        prop_assert_eq!(g[steps], 1.0);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn guidance_is_affine(
        c in prop::collection::vec(-3.0f64..3.0, 4),
        u in prop::collection::vec(-3.0f64..3.0, 4),
        s in -2.0f64..8.0,
    ) {
        let out = cfg_combine(&grid(&c), &grid(&u), s).unwrap();
        for ((o, ci), ui) in out.iter().zip(&c).zip(&u) {
            prop_assert!((o - (ui + s * (ci - ui))).abs() <= 1e-12);
        }
    }

    #[test]
    fn ogen_round_trips_bits(
        shape in prop::collection::vec(1usize..5, 1..4),
        seed in any::<u32>(),
    ) {
        let n: usize = shape.iter().product();
        let values: Vec<f32> = (0..n as u32).map(|i| f32::from_bits(i.wrapping_mul(2654435761) ^ seed)).collect();
        let a = ArrayD::from_shape_vec(IxDyn(&shape), values).unwrap();
        let b = ogen::decode(&ogen::encode(&a)).unwrap();
        prop_assert_eq!(a.shape(), b.shape());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn orbit_rays_satisfy_plucker_constraints(
        az in -180.0f64..180.0, el in -60.0f64..60.0, r in 0.5f64..5.0, fov in 0.3f64..1.5,
    ) {
        let pose = orbit_pose(az, el, r, fov, (6, 6)).unwrap();
        let rays = rays_from_pose(&pose).unwrap();
        let (unit, ortho) = rays.constraint_residuals();
        prop_assert!(unit <= 1e-9 && ortho <= 1e-9);
        let back = pose_from_raymap(&rays, fov).unwrap();
        prop_assert!((back.center - pose.center).amax() <= 1e-6);
        prop_assert!((back.rotation - pose.rotation).amax() <= 1e-6);
    }

    #[test]
    fn multiview_plan_covers_each_target_once(
        n_inputs in 1usize..3, n_targets in 1usize..20, budget in 5usize..10,
    ) {
        let targets: Vec<_> = (0..n_targets)
            .map(|k| orbit_pose(-45.0 + 100.0 * k as f64 / n_targets as f64, 10.0, 2.5, 0.9, (4, 4)).unwrap())
            .collect();
        let plan = plan_multiview(n_inputs, &targets, budget).unwrap();
        let mut seen = vec![0usize; n_targets];
        for (i, call) in plan.iter().enumerate() {
            prop_assert!(call.conditions.len() + call.targets.len() <= budget);
            for c in &call.conditions {
                if let CameraSource::Generated(g) = c {
                    prop_assert!(i > 0 && seen[*g] == 1);
                }
            }
            for &t in &call.targets {
                seen[t] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        if n_inputs + n_targets > budget {
            prop_assert_eq!(plan[0].targets.len(), ANCHOR_COUNT.min(n_targets));
        }
    }

    #[test]
    fn psnr_is_symmetric(a in prop::collection::vec(-1.0f64..1.0, 12), b in prop::collection::vec(-1.0f64..1.0, 12)) {
        let (x, y) = (Array3::from_shape_vec((3, 2, 2), a).unwrap(), Array3::from_shape_vec((3, 2, 2), b).unwrap());
        prop_assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
    }
}
