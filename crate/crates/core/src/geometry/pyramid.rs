use super::{farthest_point_sample, GeometryError, KdTree, Point3};

/// One resolution of a [`LevelPyramid`].
///
/// For level `l ≥ 1`:
/// * `parent_indices[i]` is the index of point `i` in level `l − 1`;
/// * `up_neighbors` is a flat `len(l−1) × k_up` table: for each level `l − 1`
///   point, its nearest level-`l` points (indices into this level);
/// * `group_neighbors` is a flat `len(l) × k_group` table: for each point of
///   this level, its nearest level-`l − 1` points.
///
/// Level 0 is the full cloud with empty tables.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub points: Vec<Point3>,
    pub parent_indices: Vec<usize>,
    pub up_neighbors: Vec<usize>,
    pub k_up: usize,
    pub group_neighbors: Vec<usize>,
    pub k_group: usize,
}

impl PyramidLevel {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn up_row(&self, fine_index: usize) -> &[usize] {
        &self.up_neighbors[fine_index * self.k_up..(fine_index + 1) * self.k_up]
    }

    pub fn group_row(&self, index: usize) -> &[usize] {
        &self.group_neighbors[index * self.k_group..(index + 1) * self.k_group]
    }
}

/// Multi-resolution subsampling of one cloud with precomputed neighbor tables.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPyramid {
    pub levels: Vec<PyramidLevel>,
}

impl LevelPyramid {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &PyramidLevel {
        &self.levels[l]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(PyramidLevel::len).collect()
    }
}

/// Builds a pyramid with the same group size at every level.
pub fn build_pyramid(
    points: &[Point3],
    level_sizes: &[usize],
    k_up: usize,
    k_group: usize,
) -> Result<LevelPyramid, GeometryError> {
    let groups = vec![k_group; level_sizes.len().saturating_sub(1)];
    build_pyramid_with(points, level_sizes, k_up, &groups, 0)
}

/// Builds a pyramid with per-level group sizes (`group_k[l − 1]` for level
/// `l`). Neighbor counts larger than the searched level are clamped to its
/// size. Each level is the FPS subsample of the previous one, seeded at
/// `seed_index`.
pub fn build_pyramid_with(
    points: &[Point3],
    level_sizes: &[usize],
    k_up: usize,
    group_k: &[usize],
    seed_index: usize,
) -> Result<LevelPyramid, GeometryError> {
    let bad = |reason: &str| GeometryError::LevelSizes {
        sizes: level_sizes.to_vec(),
        reason: reason.to_string(),
    };
    if level_sizes.is_empty() {
        return Err(bad("no levels"));
    }
    if level_sizes[0] != points.len() {
        return Err(bad(&format!("first size must equal the point count {}", points.len())));
    }
    if level_sizes[0] == 0 {
        return Err(bad("empty cloud"));
    }
    if level_sizes.windows(2).any(|w| w[1] >= w[0] || w[1] == 0) {
        return Err(bad("sizes must be positive and strictly decreasing"));
    }
    if group_k.len() + 1 != level_sizes.len() {
        return Err(bad(&format!("expected {} group sizes, got {}", level_sizes.len() - 1, group_k.len())));
    }
    if k_up == 0 || group_k.contains(&0) {
        return Err(bad("neighbor counts must be positive"));
    }
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(GeometryError::NonFinite(i));
    }

    let mut levels = vec![PyramidLevel {
        points: points.to_vec(),
        parent_indices: (0..points.len()).collect(),
        up_neighbors: Vec::new(),
        k_up: 0,
        group_neighbors: Vec::new(),
        k_group: 0,
    }];
    for (l, &size) in level_sizes.iter().enumerate().skip(1) {
        let fine = &levels[l - 1].points;
        let seed = seed_index.min(fine.len() - 1);
        let parent_indices = farthest_point_sample(fine, size, seed)?;
        let coarse: Vec<Point3> = parent_indices.iter().map(|&i| fine[i]).collect();

        let coarse_tree = KdTree::new(&coarse);
        let ku = k_up.min(coarse.len());
        let mut up_neighbors = Vec::with_capacity(fine.len() * ku);
        for &p in fine {
            up_neighbors.extend(coarse_tree.knn(p, ku, None)?);
        }

        let fine_tree = KdTree::new(fine);
        let kg = group_k[l - 1].min(fine.len());
        let mut group_neighbors = Vec::with_capacity(coarse.len() * kg);
        for &c in &coarse {
            group_neighbors.extend(fine_tree.knn(c, kg, None)?);
        }

        levels.push(PyramidLevel {
            points: coarse,
            parent_indices,
            up_neighbors,
            k_up: ku,
            group_neighbors,
            k_group: kg,
        });
    }
    Ok(LevelPyramid { levels })
}
