//! Procedural scenes and per-task datasets: render a scene from a few orbit
//! cameras, then write a small dataset for every task and show one record of
//! each as a PNG strip.
//!
//!     cargo run --release --example synth_dataset -- /tmp/synth

use std::path::PathBuf;

use seqflow::harness::write_image_grid;
use seqflow::synthgen::{make_dataset, make_scene, render, Dataset, DatasetSpec, DEFAULT_FOV_Y};
use seqflow::viewcodec::{orbit_pose, Task, ViewKind};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("synth"));
    std::fs::create_dir_all(&out)?;

    let scene = make_scene(3, 0);
    println!("scene caption: {}", scene.caption().join(" "));
    let views = [-60.0, 0.0, 60.0]
        .iter()
        .map(|&az| Ok(render(&scene, &orbit_pose(az, 20.0, 2.5, DEFAULT_FOV_Y, (32, 32))?, 32).image.mapv(|v| v as f32)))
        .collect::<seqflow::Result<Vec<_>>>()?;
    write_image_grid(&out.join("scene.png"), &[&views])?;

    let mut rows = Vec::new();
    for task in Task::ALL {
        let dir = out.join(task.as_str());
        make_dataset(&DatasetSpec::new(task, 4, 0, 32), &dir)?;
        let ds = Dataset::load(&dir)?;
        let rec = &ds.records[0];
        let roles: Vec<String> = rec.views.iter().map(|v| format!("{:?}/{:?}", v.content, v.role)).collect();
        println!("{:<16} prompt {:?}", task.as_str(), rec.prompt.to_strings());
        println!("{:<16} views  {}", "", roles.join(", "));
        rows.push(rec.views.iter().filter(|v| v.kind() == ViewKind::Image).map(|v| v.grid.clone()).collect::<Vec<_>>());
    }
    let refs: Vec<&[_]> = rows.iter().map(|r| r.as_slice()).collect();
    write_image_grid(&out.join("tasks.png"), &refs)?;
    println!("wrote {}", out.display());
    Ok(())
}
