//! Neighbor weights of guided propagation for a target point between two
//! coarse neighbors, as the boundary probability goes from 0 to 1.

use pushbound::geometry::Point3;
use pushbound::propagation::{propagation_weights, PropagationConfig};

fn main() -> pushbound::Result<()> {
    let target = Point3::ZERO;
    let neighbors = [Point3::new(0.1, 0.0, 0.0), Point3::new(-0.1, 0.0, 0.0)];
    // the interior direction points toward the first neighbor
    let direction = Point3::new(1.0, 0.0, 0.0);
    let guided = PropagationConfig::default();
    let standard = PropagationConfig::standard();
    println!("P_b    guided (w+, w-)       standard (w+, w-)");
    for i in 0..=4 {
        let pb = i as f64 / 4.0;
        let g = propagation_weights(target, pb, direction, &neighbors, &guided)?;
        let s = propagation_weights(target, pb, direction, &neighbors, &standard)?;
        println!("{pb:.2}   {:.6}  {:.6}    {:.6}  {:.6}", g[0], g[1], s[0], s[1]);
    }
    Ok(())
}
