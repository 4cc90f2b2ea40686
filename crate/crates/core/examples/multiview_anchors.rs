//! Planning multiview generation when the targets do not fit in one call:
//! three anchors first, then batches of three conditioned on the input and
//! the nearest anchor.
//!
//!     cargo run --release --example multiview_anchors -- 8 6

use seqflow::sampler::{plan_multiview, CameraSource};
use seqflow::synthgen::{multiview_angles, DEFAULT_FOV_Y, ORBIT_RADIUS};
use seqflow::viewcodec::orbit_pose;

fn main() -> seqflow::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let n_targets = args.next().unwrap_or(8);
    let budget = args.next().unwrap_or(6);

    let targets = (0..n_targets)
        .map(|k| {
            let (az, el) = multiview_angles(k, n_targets);
            orbit_pose(az, el, ORBIT_RADIUS, DEFAULT_FOV_Y, (16, 16))
        })
        .collect::<seqflow::Result<Vec<_>>>()?;
    let plan = plan_multiview(1, &targets, budget)?;
    println!("{n_targets} targets, 1 input, budget {budget}: {} calls", plan.len());
    for (i, call) in plan.iter().enumerate() {
        let conds: Vec<String> = call
            .conditions
            .iter()
            .map(|c| match c {
                CameraSource::Input(k) => format!("input {k}"),
                CameraSource::Generated(k) => format!("anchor {k}"),
            })
            .collect();
        println!("call {i}: condition on [{}], generate {:?}", conds.join(", "), call.targets);
    }
    Ok(())
}
