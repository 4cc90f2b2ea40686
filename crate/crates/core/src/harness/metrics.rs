use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::viewcodec::CameraPose;

pub const PSNR_CAP: f64 = 99.0;
pub const DELTA1_RATIO: f64 = 1.25;
pub const CENTER_THRESHOLD: f64 = 0.3;

/// Peak signal-to-noise ratio of two `[−1, 1]` images after remapping both
/// to `[0, 1]`; identical images give [`PSNR_CAP`].
pub fn psnr<F: Real>(a: &Array3<F>, b: &Array3<F>) -> Result<f64> {
    if a.dim() != b.dim() || a.is_empty() {
        return Err(Error::invalid(format!(
            "psnr: shapes {:?} and {:?} differ or are empty",
            a.dim(),
            b.dim()
        )));
    }
    let mut sum = 0.0;
    Zip::from(a).and(b).for_each(|&x, &y| {
        let d = 0.5 * (x.as_f64() - y.as_f64());
        sum += d * d;
    });
    let mse = sum / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub delta1: f64,
}

/// Least-squares `(scale, shift)` taking `pred` onto `gt` over `valid`.
/// A constant prediction gets a pure shift.
pub fn align_scale_shift(pred: &Array2<f64>, gt: &Array2<f64>, valid: &Array2<bool>) -> (f64, f64) {
    let (mut n, mut sp, mut sg, mut spp, mut spg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    Zip::from(pred).and(gt).and(valid).for_each(|&p, &g, &v| {
        if v {
            n += 1.0;
            sp += p;
            sg += g;
            spp += p * p;
            spg += p * g;
        }
    });
    if n == 0.0 {
        return (1.0, 0.0);
    }
    let (mp, mg) = (sp / n, sg / n);
    let var = spp / n - mp * mp;
    if var <= 1e-12 * (1.0 + mp * mp) {
        return (1.0, mg - mp);
    }
    let scale = (spg / n - mp * mg) / var;
    (scale, mg - scale * mp)
}

/// AbsRel and δ1 over `valid` pixels, optionally after affine alignment.
pub fn depth_metrics(pred: &Array2<f64>, gt: &Array2<f64>, valid: &Array2<bool>, align: bool) -> Result<DepthMetrics> {
    if pred.dim() != gt.dim() || gt.dim() != valid.dim() {
        return Err(Error::invalid("depth_metrics: shape mismatch"));
    }
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::invalid("depth_metrics: empty valid mask"));
    }
    if Zip::from(gt).and(valid).fold(false, |bad, &g, &v| bad || (v && !(g > 0.0))) {
        return Err(Error::invalid("depth_metrics: ground truth must be positive on valid pixels"));
    }
    let (s, b) = if align { align_scale_shift(pred, gt, valid) } else { (1.0, 0.0) };
    let (mut rel, mut good) = (0.0, 0usize);
    Zip::from(pred).and(gt).and(valid).for_each(|&p, &g, &v| {
        if v {
            let p = s * p + b;
            rel += (p - g).abs() / g;
            if p > 0.0 && (p / g).max(g / p) < DELTA1_RATIO {
                good += 1;
            }
        }
    });
    Ok(DepthMetrics {
        abs_rel: rel / count as f64,
        delta1: good as f64 / count as f64,
    })
}

/// Similarity transform `y ≈ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * x) + self.translation
    }
}

/// Closed-form least-squares similarity from `src` to `dst` (Umeyama).
pub fn fit_similarity(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Similarity {
    let n = src.len().max(1) as f64;
    let mx = src.iter().sum::<Vector3<f64>>() / n;
    let my = dst.iter().sum::<Vector3<f64>>() / n;
    let var_x = src.iter().map(|x| (x - mx).norm_squared()).sum::<f64>() / n;
    let cov = src
        .iter()
        .zip(dst)
        .map(|(x, y)| (y - my) * (x - mx).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let mut fix = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        fix.z = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&fix) * v_t;
    let scale = if var_x > 0.0 {
        svd.singular_values.component_mul(&fix).sum() / var_x
    } else {
        0.0
    };
    Similarity {
        scale,
        rotation,
        translation: my - scale * (rotation * mx),
    }
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k.min(n), &mut Vec::new(), &mut out);
    out
}

/// Fraction of predicted centers within `threshold · scale` of ground truth
/// after a robust similarity alignment, where `scale` is the largest distance
/// of a ground-truth center from their centroid.
///
/// Every 3-point subset proposes an alignment; the one with the most inliers
/// is refit on its inliers and scored.
pub fn center_accuracy_points(pred: &[Vector3<f64>], gt: &[Vector3<f64>], threshold: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "center_accuracy: {} predictions for {} ground-truth cameras",
            pred.len(),
            gt.len()
        )));
    }
    if gt.len() < 2 {
        return Err(Error::invalid("center_accuracy needs at least two cameras"));
    }
    let centroid = gt.iter().sum::<Vector3<f64>>() / gt.len() as f64;
    let spread = gt.iter().map(|c| (c - centroid).norm()).fold(0.0, f64::max);
    let tol = threshold * if spread > 0.0 { spread } else { 1.0 };
    let inliers = |s: &Similarity| -> (Vec<usize>, f64) {
        let mut idx = Vec::new();
        let mut err = 0.0;
        for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
            let e = (s.apply(p) - g).norm();
            err += e.min(tol);
            if e <= tol {
                idx.push(i);
            }
        }
        (idx, err)
    };
    let mut best: Option<(Vec<usize>, f64)> = None;
    for subset in subsets(pred.len(), 3) {
        let src: Vec<_> = subset.iter().map(|&i| pred[i]).collect();
        let dst: Vec<_> = subset.iter().map(|&i| gt[i]).collect();
        let (idx, err) = inliers(&fit_similarity(&src, &dst));
        let better = match &best {
            None => true,
            Some((bi, be)) => idx.len() > bi.len() || (idx.len() == bi.len() && err < *be),
        };
        if better {
            best = Some((idx, err));
        }
    }
    let (mut idx, _) = best.expect("at least one subset");
    if idx.len() >= 2 {
        let src: Vec<_> = idx.iter().map(|&i| pred[i]).collect();
        let dst: Vec<_> = idx.iter().map(|&i| gt[i]).collect();
        let (refit, _) = inliers(&fit_similarity(&src, &dst));
        if refit.len() >= idx.len() {
            idx = refit;
        }
    }
    Ok(idx.len() as f64 / pred.len() as f64)
}

pub fn center_accuracy(pred: &[CameraPose], gt: &[CameraPose], threshold: f64) -> Result<f64> {
    let p: Vec<_> = pred.iter().map(|c| c.center).collect();
    let g: Vec<_> = gt.iter().map(|c| c.center).collect();
    center_accuracy_points(&p, &g, threshold)
}

/// Named metric values with the sample count and a digest of what produced
/// them. Serializes with sorted keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    pub samples: usize,
    pub config_digest: String,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        for (k, &v) in &self.metrics {
            let ok = match k.as_str() {
                k if k.starts_with("psnr") => (0.0..=PSNR_CAP).contains(&v),
                k if k.starts_with("abs_rel") => v >= 0.0,
                k if k.starts_with("delta1") || k.starts_with("center_accuracy") => (0.0..=1.0).contains(&v),
                _ => v.is_finite(),
            };
            if !ok {
                return Err(Error::invalid(format!("metric {k} = {v} out of range")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_values() {
        let a = Array3::<f64>::from_elem((3, 4, 4), 0.2);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        // 0.2 in [-1,1] is 0.1 in [0,1]: mse 0.01
        let b = a.mapv(|v| v + 0.2);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = a.mapv(|v| v - 1.0);
        let want = 10.0 * (1.0f64 / 0.25).log10();
        assert!((psnr(&a, &c).unwrap() - want).abs() < 1e-12);
        assert!((want - 6.0206).abs() < 1e-4);
        assert_eq!(psnr(&a, &c).unwrap(), psnr(&c, &a).unwrap());
        assert!(psnr(&a, &Array3::zeros((3, 4, 5))).is_err());
    }

    #[test]
    fn depth_metric_examples() {
        let gt = Array2::from_shape_fn((5, 5), |(r, c)| 1.0 + 0.3 * r as f64 + 0.1 * c as f64);
        let all = Array2::from_elem((5, 5), true);
        let m = depth_metrics(&gt, &gt, &all, true).unwrap();
        assert!(m.abs_rel.abs() < 1e-12 && m.delta1 == 1.0);
        let scaled = gt.mapv(|v| 1.3 * v);
        assert_eq!(depth_metrics(&scaled, &gt, &all, false).unwrap().delta1, 0.0);
        assert_eq!(depth_metrics(&scaled, &gt, &all, true).unwrap().delta1, 1.0);
        let ones = Array2::from_elem((5, 5), 1.0);
        let m = depth_metrics(&ones.mapv(|v| v + 0.1), &ones, &all, false).unwrap();
        assert!((m.abs_rel - 0.1).abs() < 1e-12);
        assert!(depth_metrics(&gt, &gt, &Array2::from_elem((5, 5), false), true).is_err());

        // invariance to positive rescaling under alignment
        let pred = gt.mapv(|v| (v * 1.7).sin() + 2.0);
        let a = depth_metrics(&pred, &gt, &all, true).unwrap();
        let b = depth_metrics(&pred.mapv(|v| 4.5 * v), &gt, &all, true).unwrap();
        assert!((a.abs_rel - b.abs_rel).abs() < 1e-9 && a.delta1 == b.delta1);

        // constant prediction aligns to the mean
        let m = depth_metrics(&Array2::from_elem((5, 5), 3.0), &gt, &all, true).unwrap();
        let mean = gt.mean().unwrap();
        let want = gt.iter().map(|g| (mean - g).abs() / g).sum::<f64>() / 25.0;
        assert!((m.abs_rel - want).abs() < 1e-12);
    }

    fn ring(n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / n as f64;
                Vector3::new(2.5 * a.cos(), 0.3 * (k as f64), 2.5 * a.sin())
            })
            .collect()
    }

    #[test]
    fn center_accuracy_examples() {
        let gt = ring(6);
        assert_eq!(center_accuracy_points(&gt, &gt, 0.3).unwrap(), 1.0);
        let mut moved = gt.clone();
        moved[2] += Vector3::new(10.0, 0.0, 0.0);
        assert!((center_accuracy_points(&moved, &gt, 0.3).unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert!(center_accuracy_points(&gt[..3], &gt, 0.3).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let axis = Unit::new_normalize(Vector3::new(rng.random(), rng.random(), rng.random::<f64>() - 0.5));
            let rot = Rotation3::from_axis_angle(&axis, rng.random_range(0.0..6.0));
            let s = rng.random_range(0.2..5.0);
            let t = Vector3::new(rng.random(), rng.random(), rng.random());
            let pred: Vec<_> = gt.iter().map(|c| s * (rot * c) + t).collect();
            assert_eq!(center_accuracy_points(&pred, &gt, 0.3).unwrap(), 1.0);
            let rotated: Vec<_> = gt.iter().map(|c| rot * c).collect();
            assert_eq!(center_accuracy_points(&rotated, &gt, 0.3).unwrap(), 1.0);
        }
    }

    #[test]
    fn umeyama_recovers_transform() {
        let src = ring(5);
        let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
        let t = Vector3::new(1.0, -2.0, 0.5);
        let dst: Vec<_> = src.iter().map(|x| 0.7 * (rot * x) + t).collect();
        let s = fit_similarity(&src, &dst);
        assert!((s.scale - 0.7).abs() < 1e-10);
        assert!((s.rotation - rot).amax() < 1e-10);
        assert!((s.translation - t).amax() < 1e-10);
    }
}
