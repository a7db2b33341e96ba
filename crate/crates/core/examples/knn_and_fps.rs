//! Exact k-nearest neighbors with the kd-tree, farthest point sampling and
//! the level pyramid built from both.

use pushbound::geometry::{brute_force_knn, build_pyramid, farthest_point_sample, KdTree, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pushbound::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let points: Vec<Point3> = (0..2000)
        .map(|_| Point3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..0.2)))
        .collect();
    let tree = KdTree::new(&points);
    let q = Point3::new(0.5, 0.5, 0.1);
    let fast = tree.knn(q, 8, None)?;
    assert_eq!(fast, brute_force_knn(&points, q, 8, None));
    println!("8 nearest to {q:?}: {fast:?}");

    let picked = farthest_point_sample(&points, 16, 0)?;
    let spread = picked
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| picked[i + 1..].iter().map(move |&b| (a, b)))
        .map(|(a, b)| points[a].dist(points[b]))
        .fold(f64::INFINITY, f64::min);
    println!("16 FPS samples, minimum pairwise distance {spread:.3}");

    let pyr = build_pyramid(&points, &[2000, 500, 125], 3, 16)?;
    println!("pyramid sizes {:?}", pyr.sizes());
    let coarse = pyr.level(1);
    println!("fine point 0 reads coarse points {:?}", coarse.up_row(0));
    Ok(())
}
