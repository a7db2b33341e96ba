//! Generates one synthetic indoor room and writes it as an ASCII PLY file.
//!
//! cargo run --example synthetic_scene [-- OUT.ply [SEED]]

use pushbound::io::{write_ply, ColorMode, PlyCloud};
use pushbound::synthgen::{generate, SceneSpec};

fn main() -> pushbound::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "scene.ply".into());
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let spec = SceneSpec::indoor(seed);
    let cloud = generate(&spec)?;
    let names = spec.class_names();
    println!("room {:.2} x {:.2} x {:.2} m, {} points", spec.room.x, spec.room.y, spec.room.z, cloud.len());
    for (c, name) in names.iter().enumerate() {
        let n = cloud.labels.iter().filter(|&&l| l == c).count();
        println!("  {name:<8} {n:>5}");
    }
    let mut ply = PlyCloud::new(cloud);
    ply.class_names = names;
    write_ply(out.as_ref(), &ply, ColorMode::Original)?;
    println!("wrote {out}");
    Ok(())
}
