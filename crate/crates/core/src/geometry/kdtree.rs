use super::{GeometryError, Point3};

const DEFAULT_BUCKET: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Exact kNN index over a fixed point set.
///
/// Results are identical to a linear scan ranked by `(squared distance,
/// index)`: equal distances resolve to the lower index. The tree is
/// immutable after construction and can be queried from many threads.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Point3]) -> Self {
        Self::with_bucket_size(points, DEFAULT_BUCKET)
    }

    pub fn with_bucket_size(points: &[Point3], bucket: usize) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len(), bucket.max(1));
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize, bucket: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= bucket {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let points = &self.points;
        self.order[start..end].sort_unstable_by(|&a, &b| {
            points[a]
                .coord(axis)
                .total_cmp(&points[b].coord(axis))
                .then(a.cmp(&b))
        });
        let mid = start + (end - start) / 2;
        let value = self.points[self.order[mid]].coord(axis);
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid, bucket);
        let right = self.build(mid, end, bucket);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for (axis, (l, h)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                let c = self.points[i].coord(axis);
                *l = l.min(c);
                *h = h.max(c);
            }
        }
        (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap_or(0)
    }

    /// The `k` nearest points to `query` in ascending `(distance, index)`
    /// order. `exclude` omits one dataset index (the query's own).
    pub fn knn(&self, query: Point3, k: usize, exclude: Option<usize>) -> Result<Vec<usize>, GeometryError> {
        Ok(self
            .knn_with_distances(query, k, exclude)?
            .into_iter()
            .map(|(_, i)| i)
            .collect())
    }

    /// As [`KdTree::knn`], returning `(squared distance, index)` pairs.
    pub fn knn_with_distances(
        &self,
        query: Point3,
        k: usize,
        exclude: Option<usize>,
    ) -> Result<Vec<(f64, usize)>, GeometryError> {
        let available = self.len() - usize::from(exclude.is_some_and(|e| e < self.len()));
        if k > available {
            return Err(GeometryError::KTooLarge { k, available });
        }
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(0, query, k, exclude, &mut best);
        }
        Ok(best)
    }

    /// Nearest point, or `None` when nothing is left after exclusion.
    pub fn nearest(&self, query: Point3, exclude: Option<usize>) -> Option<(f64, usize)> {
        self.knn_with_distances(query, 1, exclude).ok()?.first().copied()
    }

    fn search(&self, node: usize, q: Point3, k: usize, exclude: Option<usize>, best: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = (q.dist2(self.points[i]), i);
                    if best.len() == k && !less(cand, best[k - 1]) {
                        continue;
                    }
                    let pos = best.partition_point(|&b| less(b, cand));
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q.coord(axis) - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, exclude, best);
                // equality must still be visited: a tied point may carry a lower index
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.search(far, q, k, exclude, best);
                }
            }
        }
    }
}

fn less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Linear-scan reference kNN with the same ranking rule as [`KdTree`].
pub fn brute_force_knn(points: &[Point3], query: Point3, k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| Some(i) != exclude)
        .map(|(i, p)| (query.dist2(*p), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize) -> Vec<Point3> {
        (0..n).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect()
    }

    #[test]
    fn collinear_ordering_with_self_exclusion() {
        let pts = line(6);
        let tree = KdTree::with_bucket_size(&pts, 2);
        assert_eq!(tree.knn(pts[0], 2, Some(0)).unwrap(), vec![1, 2]);
        assert_eq!(tree.knn(pts[0], 2, None).unwrap(), vec![0, 1]);
    }

    #[test]
    fn equidistant_pair_lower_index_first() {
        let pts = vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
        ];
        let tree = KdTree::with_bucket_size(&pts, 1);
        assert_eq!(tree.knn(pts[1], 2, Some(1)).unwrap(), vec![0, 2]);
        let pts_rev = vec![pts[2], pts[1], pts[0]];
        let tree = KdTree::with_bucket_size(&pts_rev, 1);
        assert_eq!(tree.knn(pts_rev[1], 2, Some(1)).unwrap(), vec![0, 2]);
    }

    #[test]
    fn k_too_large_is_an_error() {
        let pts = line(4);
        let tree = KdTree::new(&pts);
        assert_eq!(
            tree.knn(pts[0], 4, Some(0)),
            Err(GeometryError::KTooLarge { k: 4, available: 3 })
        );
        assert_eq!(tree.knn(pts[0], 4, None).unwrap().len(), 4);
    }

    #[test]
    fn matches_brute_force_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let n = rng.random_range(2..=512);
            let pts: Vec<Point3> = (0..n)
                .map(|_| {
                    Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                })
                .collect();
            let tree = KdTree::new(&pts);
            let k = rng.random_range(1..n.min(16));
            for i in (0..n).step_by(7) {
                let got = tree.knn(pts[i], k, Some(i)).unwrap();
                assert_eq!(got, brute_force_knn(&pts, pts[i], k, Some(i)), "trial {trial} point {i}");
            }
        }
    }

    #[test]
    fn grid_ties_match_brute_force() {
        // integer lattice: massive distance ties
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                for z in 0..3 {
                    pts.push(Point3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let tree = KdTree::with_bucket_size(&pts, 3);
        for (i, p) in pts.iter().enumerate() {
            for k in [1, 4, 7, 19] {
                assert_eq!(tree.knn(*p, k, Some(i)).unwrap(), brute_force_knn(&pts, *p, k, Some(i)));
            }
        }
    }

    proptest! {
        #[test]
        fn translation_leaves_indices_unchanged(
            raw in prop::collection::vec((-5i32..5, -5i32..5, -5i32..5), 5..60),
            shift in (-100i32..100, -100i32..100, -100i32..100),
            k in 1usize..4,
        ) {
            // integer coordinates keep translated squared distances exact
            let pts: Vec<Point3> = raw.iter().map(|&(x, y, z)| Point3::new(x as f64, y as f64, z as f64)).collect();
            let t = Point3::new(shift.0 as f64, shift.1 as f64, shift.2 as f64);
            let moved: Vec<Point3> = pts.iter().map(|&p| p + t).collect();
            let (a, b) = (KdTree::new(&pts), KdTree::new(&moved));
            for i in 0..pts.len() {
                prop_assert_eq!(a.knn(pts[i], k, Some(i)).unwrap(), b.knn(moved[i], k, Some(i)).unwrap());
            }
        }
    }
}
