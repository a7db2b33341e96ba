//! Points, exact kNN search, farthest-point sampling and the level pyramid.

mod kdtree;
mod pyramid;
mod sampling;

use std::ops::{Add, Mul, Sub};

use thiserror::Error;

pub use kdtree::{brute_force_knn, KdTree};
pub use pyramid::{build_pyramid, build_pyramid_with, LevelPyramid, PyramidLevel};
pub use sampling::farthest_point_sample;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("requested k={k} neighbors but only {available} points are available")]
    KTooLarge { k: usize, available: usize },
    #[error("sample count {m} out of range 1..={n}")]
    SampleCount { m: usize, n: usize },
    #[error("seed index {index} out of range for {n} points")]
    SeedIndex { index: usize, n: usize },
    #[error("invalid level sizes {sizes:?}: {reason}")]
    LevelSizes { sizes: Vec<usize>, reason: String },
    #[error("non-finite point at index {0}")]
    NonFinite(usize),
}

/// A point (or displacement) in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn coord(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Squared distance; every neighbor search in the crate ranks by this value.
    pub fn dist2(self, o: Point3) -> f64 {
        let (dx, dy, dz) = (self.x - o.x, self.y - o.y, self.z - o.z);
        dx * dx + dy * dy + dz * dz
    }

    pub fn dist(self, o: Point3) -> f64 {
        self.dist2(o).sqrt()
    }

    /// Unit vector in the same direction, or `None` for (near-)zero vectors.
    pub fn normalized(self) -> Option<Point3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}
