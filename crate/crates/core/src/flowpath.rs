//! Flow-matching math on the linear interpolation path.
//!
//! Time convention: `t = 0` is pure noise and `t = 1` is clean data, so the
//! noised view is `t·x + (1−t)·ε` and its velocity is the constant `x − ε`.
//! Condition views therefore sit at `t = 1` during sampling.

use ndarray::{Array, ArrayBase, Data, Dimension, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::real::Real;

/// The clean-data endpoint of the time interval.
pub const CLEAN_TIME: f64 = 1.0;
/// The pure-noise endpoint of the time interval.
pub const NOISE_TIME: f64 = 0.0;

/// One time value per view of a sequence, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVector {
    times: Vec<f64>,
}

impl TimeVector {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if let Some(bad) = times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::invalid(format!("time {bad} outside [0, 1]")));
        }
        Ok(Self { times })
    }

    pub fn uniform(n: usize, t: f64) -> Result<Self> {
        Self::new(vec![t; n])
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.times
    }

    pub fn get(&self, i: usize) -> f64 {
        self.times[i]
    }
}

/// The fixed linear schedule `alpha(t) = t`, `beta(t) = 1 − t`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearPath;

impl LinearPath {
    pub fn alpha(t: f64) -> f64 {
        t
    }

    pub fn beta(t: f64) -> f64 {
        1.0 - t
    }
}

/// Draws one logit-normal time per view: `sigmoid(z)` with `z ~ N(0, 1)`.
pub fn sample_timesteps<R: Rng + ?Sized>(n_views: usize, rng: &mut R) -> Result<TimeVector> {
    if n_views == 0 {
        return Err(Error::invalid("sample_timesteps needs at least one view"));
    }
    let times = (0..n_views)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            time_from_normal(z)
        })
        .collect();
    Ok(TimeVector { times })
}

/// Maps a standard-normal draw to a logit-normal time.
pub fn time_from_normal(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn check_shapes<D: Dimension>(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!(
            "{what}: shape mismatch {a:?} vs {b:?}"
        )));
    }
    Ok(())
}

/// `t·x + (1−t)·eps`, elementwise.
pub fn interpolate<F, S1, S2, D>(
    x: &ArrayBase<S1, D>,
    eps: &ArrayBase<S2, D>,
    t: F,
) -> Result<Array<F, D>>
where
    F: Real,
    S1: Data<Elem = F>,
    S2: Data<Elem = F>,
    D: Dimension,
{
    check_shapes::<D>(x.shape(), eps.shape(), "interpolate")?;
    // endpoints are returned verbatim so signed zeros survive
    if t == F::one() {
        return Ok(x.to_owned());
    }
    if t == F::zero() {
        return Ok(eps.to_owned());
    }
    let one_minus = F::one() - t;
    Ok(Zip::from(x)
        .and(eps)
        .map_collect(|&xv, &ev| t * xv + one_minus * ev))
}

/// The constant velocity `x − eps` of the linear path.
pub fn velocity_target<F, S1, S2, D>(
    x: &ArrayBase<S1, D>,
    eps: &ArrayBase<S2, D>,
) -> Result<Array<F, D>>
where
    F: Real,
    S1: Data<Elem = F>,
    S2: Data<Elem = F>,
    D: Dimension,
{
    check_shapes::<D>(x.shape(), eps.shape(), "velocity_target")?;
    Ok(Zip::from(x).and(eps).map_collect(|&xv, &ev| xv - ev))
}

/// Resolution-style time shift applied to the noise level `1 − t`.
///
/// Returns `1 − s·(1−t) / (1 + (s−1)·(1−t))`, a monotone bijection of `[0, 1]`
/// that fixes both endpoints and concentrates steps near the noisy end.
pub fn shift_time(t: f64, shift: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("time {t} outside [0, 1]")));
    }
    if !(shift >= 1.0) || !shift.is_finite() {
        return Err(Error::invalid(format!("shift must be >= 1, got {shift}")));
    }
    if t == 1.0 || shift == 1.0 {
        return Ok(t);
    }
    let sigma = 1.0 - t;
    Ok(1.0 - shift * sigma / (1.0 + (shift - 1.0) * sigma))
}

/// Mean squared error over every element of every view.
pub fn cfm_loss<F, S1, S2, D>(predicted: &[ArrayBase<S1, D>], target: &[ArrayBase<S2, D>]) -> Result<f64>
where
    F: Real,
    S1: Data<Elem = F>,
    S2: Data<Elem = F>,
    D: Dimension,
{
    if predicted.len() != target.len() {
        return Err(Error::invalid(format!(
            "cfm_loss: {} predicted views vs {} targets",
            predicted.len(),
            target.len()
        )));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (p, u) in predicted.iter().zip(target) {
        check_shapes::<D>(p.shape(), u.shape(), "cfm_loss")?;
        Zip::from(p).and(u).for_each(|&a, &b| {
            let d = (a - b).as_f64();
            sum += d * d;
        });
        count += p.len();
    }
    if count == 0 {
        return Err(Error::invalid("cfm_loss over zero elements"));
    }
    Ok(sum / count as f64)
}
