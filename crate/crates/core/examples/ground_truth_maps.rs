//! Derives the boundary and interior-direction maps of a synthetic scene,
//! checks them against the quadratic reference and exports a PLY colored by
//! boundary membership.
//!
//! cargo run --release --example ground_truth_maps [-- OUT.ply]

use pushbound::groundtruth::{brute_force, derive_maps};
use pushbound::io::{write_ply, ColorMode, PlyCloud};
use pushbound::synthgen::{generate, SceneSpec};

fn main() -> pushbound::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "boundaries.ply".into());
    let spec = SceneSpec::indoor_with(1, 2048, 0.005, true);
    let cloud = generate(&spec)?;
    let (boundary, directions) = derive_maps(&cloud)?;
    println!(
        "{} of {} points on a class boundary, {} valid directions",
        boundary.count(),
        cloud.len(),
        directions.valid_count()
    );

    let slow_b = brute_force::derive_boundary_map(&cloud, 4)?;
    let slow_d = brute_force::derive_direction_map(&cloud, &slow_b)?;
    let worst = directions
        .vectors
        .iter()
        .zip(&slow_d.vectors)
        .map(|(a, b)| (*a - *b).norm())
        .fold(0.0, f64::max);
    println!("reference agrees: flags {}, max direction difference {worst:.1e}", slow_b == boundary);

    let mut ply = PlyCloud::new(cloud);
    ply.class_names = spec.class_names();
    ply.boundary = Some(boundary);
    ply.directions = Some(directions);
    write_ply(out.as_ref(), &ply, ColorMode::BoundaryRed)?;
    println!("wrote {out}");
    Ok(())
}
