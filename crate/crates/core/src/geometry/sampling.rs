use super::{GeometryError, Point3};

/// Greedy max-min subsampling starting from `seed_index`.
///
/// Each step picks the point farthest from everything already chosen; ties go
/// to the lowest index, so the selection is fully deterministic.
pub fn farthest_point_sample(points: &[Point3], m: usize, seed_index: usize) -> Result<Vec<usize>, GeometryError> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(GeometryError::SampleCount { m, n });
    }
    if seed_index >= n {
        return Err(GeometryError::SeedIndex { index: seed_index, n });
    }
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut picked = Vec::with_capacity(m);
    let mut current = seed_index;
    loop {
        picked.push(current);
        // chosen points can never be picked again, even over duplicates at d=0
        min_d2[current] = -1.0;
        if picked.len() == m {
            break;
        }
        let c = points[current];
        let mut next = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for (i, d) in min_d2.iter_mut().enumerate() {
            if *d < 0.0 {
                continue;
            }
            let d2 = c.dist2(points[i]);
            if d2 < *d {
                *d = d2;
            }
            if *d > best {
                best = *d;
                next = i;
            }
        }
        current = next;
    }
    Ok(picked)
}
