//! Ground-truth boundary and direction maps derived from labels.
//!
//! A point is a boundary point when any of its `k` nearest neighbors (itself
//! excluded) carries a different label. Interior points point away from
//! their nearest boundary point; boundary points point toward the nearest
//! interior point of their own class.

use crate::geometry::{KdTree, Point3};
use crate::synthgen::LabeledCloud;
use crate::{Error, Result};

pub const DEFAULT_BOUNDARY_K: usize = 4;

/// Below this length a displacement is treated as zero.
const MIN_OFFSET: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMap {
    pub flags: Vec<bool>,
}

impl BoundaryMap {
    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Indices of boundary points, ascending.
    pub fn indices(&self) -> Vec<usize> {
        (0..self.flags.len()).filter(|&i| self.flags[i]).collect()
    }
}

/// Per-point unit directions; `valid[i]` is false (and the vector zero) where
/// no direction is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMap {
    pub vectors: Vec<Point3>,
    pub valid: Vec<bool>,
}

impl DirectionMap {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Rebuilds the mask from the vectors (nonzero ⇔ valid), as when read
    /// back from a file.
    pub fn from_vectors(vectors: Vec<Point3>) -> Self {
        let valid = vectors.iter().map(|v| *v != Point3::ZERO).collect();
        Self { vectors, valid }
    }
}

fn check_k(cloud: &LabeledCloud, k: usize) -> Result<()> {
    if k == 0 || cloud.len() <= k {
        return Err(Error::Scene(format!(
            "boundary detection with k={k} needs more than {k} points, cloud has {}",
            cloud.len()
        )));
    }
    Ok(())
}

pub fn derive_boundary_map(cloud: &LabeledCloud, k: usize) -> Result<BoundaryMap> {
    check_k(cloud, k)?;
    let tree = KdTree::new(&cloud.positions);
    let mut flags = Vec::with_capacity(cloud.len());
    for (i, &p) in cloud.positions.iter().enumerate() {
        let neighbors = tree.knn(p, k, Some(i))?;
        flags.push(neighbors.iter().any(|&j| cloud.labels[j] != cloud.labels[i]));
    }
    Ok(BoundaryMap { flags })
}

fn unit_or_invalid(v: Point3) -> (Point3, bool) {
    if v.norm() <= MIN_OFFSET {
        return (Point3::ZERO, false);
    }
    match v.normalized() {
        Some(u) => (u, true),
        None => (Point3::ZERO, false),
    }
}

/// Subset index: kd-tree over `members` mapping hits back to cloud indices.
/// `members` is ascending, so the tree's lowest-index tie rule carries over.
struct Subset {
    members: Vec<usize>,
    tree: KdTree,
}

impl Subset {
    fn new(cloud: &LabeledCloud, members: Vec<usize>) -> Self {
        let pts: Vec<Point3> = members.iter().map(|&i| cloud.positions[i]).collect();
        Self {
            tree: KdTree::new(&pts),
            members,
        }
    }

    fn nearest(&self, q: Point3) -> Option<usize> {
        self.tree.nearest(q, None).map(|(_, j)| self.members[j])
    }
}

pub fn derive_direction_map(cloud: &LabeledCloud, boundary: &BoundaryMap) -> Result<DirectionMap> {
    if boundary.len() != cloud.len() {
        return Err(Error::Mismatch(format!(
            "boundary map has {} entries for {} points",
            boundary.len(),
            cloud.len()
        )));
    }
    let n = cloud.len();
    let boundary_set = Subset::new(cloud, boundary.indices());
    let interior_by_class: Vec<Subset> = (0..cloud.num_classes)
        .map(|c| {
            let members = (0..n)
                .filter(|&i| !boundary.flags[i] && cloud.labels[i] == c)
                .collect();
            Subset::new(cloud, members)
        })
        .collect();

    let mut vectors = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for (i, &p) in cloud.positions.iter().enumerate() {
        let target = if boundary.flags[i] {
            interior_by_class
                .get(cloud.labels[i])
                .and_then(|s| s.nearest(p))
                .map(|q| cloud.positions[q] - p)
        } else {
            boundary_set.nearest(p).map(|b| p - cloud.positions[b])
        };
        let (v, ok) = target.map_or((Point3::ZERO, false), unit_or_invalid);
        vectors.push(v);
        valid.push(ok);
    }
    Ok(DirectionMap { vectors, valid })
}

/// Both maps with the default `k = 4`.
pub fn derive_maps(cloud: &LabeledCloud) -> Result<(BoundaryMap, DirectionMap)> {
    let b = derive_boundary_map(cloud, DEFAULT_BOUNDARY_K)?;
    let d = derive_direction_map(cloud, &b)?;
    Ok((b, d))
}

/// Quadratic-time reference derivation by exhaustive scans, sharing no search
/// code with the kd-tree path.
pub mod brute_force {
    use super::*;

    fn ranked(cloud: &LabeledCloud, i: usize) -> Vec<(f64, usize)> {
        let p = cloud.positions[i];
        let mut all: Vec<(f64, usize)> = (0..cloud.len())
            .filter(|&j| j != i)
            .map(|j| (p.dist2(cloud.positions[j]), j))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all
    }

    pub fn derive_boundary_map(cloud: &LabeledCloud, k: usize) -> Result<BoundaryMap> {
        check_k(cloud, k)?;
        let flags = (0..cloud.len())
            .map(|i| ranked(cloud, i)[..k].iter().any(|&(_, j)| cloud.labels[j] != cloud.labels[i]))
            .collect();
        Ok(BoundaryMap { flags })
    }

    fn nearest_where(cloud: &LabeledCloud, p: Point3, pred: impl Fn(usize) -> bool) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..cloud.len() {
            if !pred(j) {
                continue;
            }
            let d = p.dist2(cloud.positions[j]);
            // ascending j: strict comparison keeps the lowest index on ties
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        best.map(|(_, j)| j)
    }

    pub fn derive_direction_map(cloud: &LabeledCloud, boundary: &BoundaryMap) -> Result<DirectionMap> {
        if boundary.len() != cloud.len() {
            return Err(Error::Mismatch("boundary map length".into()));
        }
        let mut vectors = Vec::with_capacity(cloud.len());
        let mut valid = Vec::with_capacity(cloud.len());
        for i in 0..cloud.len() {
            let p = cloud.positions[i];
            let target = if boundary.flags[i] {
                nearest_where(cloud, p, |j| !boundary.flags[j] && cloud.labels[j] == cloud.labels[i])
                    .map(|q| cloud.positions[q] - p)
            } else {
                nearest_where(cloud, p, |j| boundary.flags[j]).map(|b| p - cloud.positions[b])
            };
            let (v, ok) = target.map_or((Point3::ZERO, false), unit_or_invalid);
            vectors.push(v);
            valid.push(ok);
        }
        Ok(DirectionMap { vectors, valid })
    }
}
