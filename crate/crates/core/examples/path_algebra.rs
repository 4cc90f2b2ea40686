//! The straight-line path between noise and data, its velocity, the shifted
//! sampling grid, and Euler integration landing exactly on the data when the
//! velocity field is perfect.
//!
//!     cargo run --release --example path_algebra

use ndarray::{array, Array3};
use seqflow::flowpath::{interpolate, shift_time, velocity_target, TimeVector};
use seqflow::sampler::{conditional_sample, time_grid, SamplerConfig, VelocityModel};
use seqflow::viewcodec::{TaskPrompt, View, ViewKind, ViewSequence};

/// Knows the data point and points every state straight at it.
struct Straight(Array3<f64>);

impl VelocityModel<f64> for Straight {
    fn velocity(&self, seq: &ViewSequence<f64>, times: &TimeVector, _: &TaskPrompt) -> seqflow::Result<Vec<Array3<f64>>> {
        let t = times.get(0);
        Ok(vec![(&self.0 - &seq.views[0].latent) / (1.0 - t)])
    }
}

fn main() -> seqflow::Result<()> {
    let x = array![[[1.0, -0.5], [0.25, 2.0]]];
    let eps = array![[[0.3, 0.1], [-1.2, 0.0]]];
    for t in [0.0, 0.25, 0.5, 1.0] {
        println!("x_t at t={t}: {:?}", interpolate(&x, &eps, t)?.iter().collect::<Vec<_>>());
    }
    println!("velocity x - eps: {:?}", velocity_target(&x, &eps)?.iter().collect::<Vec<_>>());

    println!("shift 3 moves t=0.5 to {:.4}", shift_time(0.5, 3.0)?);
    let grid = time_grid(8, 3.0)?;
    println!("8-step grid: {:?}", grid.iter().map(|t| format!("{t:.3}")).collect::<Vec<_>>());

    let seq = ViewSequence::new(vec![View::target(ViewKind::Image, Array3::zeros(x.raw_dim()))]);
    for steps in [1, 7, 100] {
        let cfg = SamplerConfig { steps, guidance_scale: 1.0, ..SamplerConfig::default() };
        let out = conditional_sample(&Straight(x.clone()), &seq, &TaskPrompt::null(), &cfg)?;
        let err = (&out.views[0].latent - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!("{steps:>3} Euler steps: max error {err:.1e}");
    }
    Ok(())
}
