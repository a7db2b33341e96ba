//! Deterministic labeled indoor scenes.
//!
//! A [`SceneSpec`] is a room plus a list of labeled planar primitives; points
//! are drawn uniformly over the total primitive area. The default
//! [`SceneSpec::indoor`] room embeds boards coplanar in its walls, so that
//! some class seams have no geometric signature at all.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::geometry::Point3;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const DEFAULT_POINTS: usize = 4096;
pub const DEFAULT_NOISE: f64 = 0.005;

/// Per-point labeled cloud.
///
/// Positions, colors and normals hold values exactly representable as `f32`
/// (colors additionally on the 1/255 grid), so ASCII PLY round-trips are
/// lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub positions: Vec<Point3>,
    /// RGB in `[0, 1]`.
    pub colors: Vec<[f64; 3]>,
    pub normals: Option<Vec<Point3>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// 3 with colors only, 6 with normals.
    pub fn feature_dim(&self) -> usize {
        if self.normals.is_some() {
            6
        } else {
            3
        }
    }

    /// `N × F` input features: RGB, then normals when present.
    pub fn features(&self) -> Tensor {
        let f = self.feature_dim();
        let mut data = Vec::with_capacity(self.len() * f);
        for i in 0..self.len() {
            data.extend_from_slice(&self.colors[i]);
            if let Some(n) = &self.normals {
                data.extend_from_slice(&n[i].to_array());
            }
        }
        Tensor::new(self.len(), f, data).expect("feature layout")
    }

    /// Checks the structural invariants (lengths, label range, finiteness,
    /// unit normals).
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.colors.len() != n || self.labels.len() != n {
            return Err(Error::Scene(format!(
                "length mismatch: {} positions, {} colors, {} labels",
                n,
                self.colors.len(),
                self.labels.len()
            )));
        }
        if let Some(i) = self.labels.iter().position(|&l| l >= self.num_classes) {
            return Err(Error::Scene(format!(
                "label {} at point {i} is not below class count {}",
                self.labels[i], self.num_classes
            )));
        }
        if let Some(i) = self.positions.iter().position(|p| !p.is_finite()) {
            return Err(Error::Scene(format!("non-finite position at point {i}")));
        }
        if let Some(i) = self.colors.iter().position(|c| c.iter().any(|v| !(0.0..=1.0).contains(v))) {
            return Err(Error::Scene(format!("color outside [0, 1] at point {i}")));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::Scene(format!("{} normals for {n} points", normals.len())));
            }
            if let Some(i) = normals.iter().position(|v| (v.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::Scene(format!("normal at point {i} is not unit length")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    pub color: [f64; 3],
    /// Standard deviation of per-channel color noise.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Parallelogram `origin + s·u + t·v`, `s, t ∈ [0, 1]`, normal along `u × v`.
    Rect { origin: Point3, u: Point3, v: Point3 },
    /// Axis-aligned box surface with outward normals; the bottom face is
    /// omitted when `open_bottom` (objects standing on the floor).
    Box { min: Point3, max: Point3, open_bottom: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub class: usize,
    pub shape: Shape,
}

impl Primitive {
    pub fn rect(class: usize, origin: Point3, u: Point3, v: Point3) -> Self {
        Self {
            class,
            shape: Shape::Rect { origin, u, v },
        }
    }

    pub fn cuboid(class: usize, min: Point3, max: Point3, open_bottom: bool) -> Self {
        Self {
            class,
            shape: Shape::Box { min, max, open_bottom },
        }
    }

    /// The planar faces making up this primitive.
    fn faces(&self) -> Vec<Face> {
        match self.shape {
            Shape::Rect { origin, u, v } => vec![Face { origin, u, v }],
            Shape::Box { min, max, open_bottom } => {
                let d = max - min;
                let (ex, ey, ez) = (Point3::new(d.x, 0.0, 0.0), Point3::new(0.0, d.y, 0.0), Point3::new(0.0, 0.0, d.z));
                // each face oriented so u × v points outward
                let mut faces = vec![
                    Face { origin: min, u: ez, v: ey },                        // -x
                    Face { origin: min + ex, u: ey, v: ez },                   // +x
                    Face { origin: min, u: ex, v: ez },                        // -y
                    Face { origin: min + ey, u: ez, v: ex },                   // +y
                    Face { origin: min + ez, u: ex, v: ey },                   // +z
                ];
                if !open_bottom {
                    faces.push(Face { origin: min, u: ey, v: ex }); // -z
                }
                faces
            }
        }
    }

    pub fn area(&self) -> f64 {
        self.faces().iter().map(Face::area).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Face {
    origin: Point3,
    u: Point3,
    v: Point3,
}

impl Face {
    fn area(&self) -> f64 {
        self.u.cross(self.v).norm()
    }

    fn normal(&self) -> Point3 {
        self.u.cross(self.v).normalized().unwrap_or(Point3::ZERO)
    }

    fn at(&self, s: f64, t: f64) -> Point3 {
        self.origin + self.u * s + self.v * t
    }
}

/// Full description of one synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// Room spans `[0, extent]` on every axis (meters).
    pub room: Point3,
    pub num_points: usize,
    pub classes: Vec<ClassSpec>,
    pub primitives: Vec<Primitive>,
    /// Isotropic Gaussian position noise (meters).
    pub noise: f64,
    pub normals: bool,
}

pub const INDOOR_CLASSES: [&str; 6] = ["floor", "ceiling", "wall", "board", "column", "clutter"];

/// Indoor palette: board and column colors sit close to the wall color.
pub fn indoor_classes() -> Vec<ClassSpec> {
    let spec = |name: &str, color: [f64; 3], jitter: f64| ClassSpec {
        name: name.to_string(),
        color,
        jitter,
    };
    vec![
        spec("floor", [0.55, 0.45, 0.35], 0.05),
        spec("ceiling", [0.90, 0.90, 0.88], 0.03),
        spec("wall", [0.78, 0.76, 0.70], 0.04),
        spec("board", [0.60, 0.68, 0.62], 0.04),
        spec("column", [0.66, 0.66, 0.74], 0.04),
        spec("clutter", [0.45, 0.33, 0.52], 0.08),
    ]
}

impl SceneSpec {
    /// Randomized room with floor, ceiling, four walls, 1–2 boards set
    /// coplanar into walls, one column and 2–3 clutter boxes.
    pub fn indoor(seed: u64) -> Self {
        Self::indoor_with(seed, DEFAULT_POINTS, DEFAULT_NOISE, true)
    }

    pub fn indoor_with(seed: u64, num_points: usize, noise: f64, normals: bool) -> Self {
        const FLOOR: usize = 0;
        const CEILING: usize = 1;
        const WALL: usize = 2;
        const BOARD: usize = 3;
        const COLUMN: usize = 4;
        const CLUTTER: usize = 5;

        // separate stream from point sampling so layouts do not depend on N
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a70_u64);
        let lx = rng.random_range(3.0..4.5);
        let ly = rng.random_range(3.0..4.0);
        let h = rng.random_range(2.4..2.8);
        let room = Point3::new(lx, ly, h);
        let ex = Point3::new(lx, 0.0, 0.0);
        let ey = Point3::new(0.0, ly, 0.0);
        let ez = Point3::new(0.0, 0.0, h);

        let mut prims = vec![
            Primitive::rect(FLOOR, Point3::ZERO, ex, ey),
            Primitive::rect(CEILING, ez, ey, ex),
        ];

        // (origin, horizontal extent); extent × up points into the room
        let walls = [
            (ex, ex * -1.0),      // y = 0
            (ey, ex),             // y = ly
            (Point3::ZERO, ey),   // x = 0
            (ex + ey, ey * -1.0), // x = lx
        ];
        let n_boards = rng.random_range(1..=2);
        let mut board_walls: Vec<usize> = (0..4).collect();
        for i in 0..4 {
            let j = rng.random_range(i..4);
            board_walls.swap(i, j);
        }
        board_walls.truncate(n_boards);
        for (w, &(origin, along)) in walls.iter().enumerate() {
            let width = along.norm();
            if board_walls.contains(&w) {
                let bw = rng.random_range(0.8..(width * 0.5).min(1.8));
                let bh = rng.random_range(0.7..1.1);
                let s0 = rng.random_range(0.3..(width - bw - 0.3));
                let z0 = rng.random_range(0.8..(h - bh - 0.3));
                let dir = along * (1.0 / width);
                // wall = board plus the four rectangles around it, all coplanar
                let up = |z: f64| Point3::new(0.0, 0.0, z);
                let at = |s: f64, z: f64| origin + dir * s + up(z);
                prims.push(Primitive::rect(BOARD, at(s0, z0), dir * bw, up(bh)));
                prims.push(Primitive::rect(WALL, at(0.0, 0.0), dir * s0, up(h)));
                prims.push(Primitive::rect(WALL, at(s0 + bw, 0.0), dir * (width - s0 - bw), up(h)));
                prims.push(Primitive::rect(WALL, at(s0, 0.0), dir * bw, up(z0)));
                prims.push(Primitive::rect(WALL, at(s0, z0 + bh), dir * bw, up(h - z0 - bh)));
            } else {
                prims.push(Primitive::rect(WALL, origin, along, ez));
            }
        }

        let cw = rng.random_range(0.3..0.5);
        let cx = rng.random_range(0.4..lx - 0.4 - cw);
        let cy = rng.random_range(0.4..ly - 0.4 - cw);
        prims.push(Primitive::cuboid(
            COLUMN,
            Point3::new(cx, cy, 0.0),
            Point3::new(cx + cw, cy + cw, h),
            true,
        ));

        for _ in 0..rng.random_range(2..=3) {
            let (sx, sy) = (rng.random_range(0.4..0.9), rng.random_range(0.4..0.9));
            let sz = rng.random_range(0.4..0.9);
            let x0 = rng.random_range(0.1..lx - sx - 0.1);
            let y0 = rng.random_range(0.1..ly - sy - 0.1);
            prims.push(Primitive::cuboid(
                CLUTTER,
                Point3::new(x0, y0, 0.0),
                Point3::new(x0 + sx, y0 + sy, sz),
                true,
            ));
        }

        SceneSpec {
            seed,
            room,
            num_points,
            classes: indoor_classes(),
            primitives: prims,
            noise,
            normals,
        }
    }

    /// Keeps the first `k − 1` classes and merges all others into class
    /// `k − 1`. Geometry and point sampling are unchanged.
    pub fn with_classes(mut self, k: usize) -> Result<Self> {
        let have = self.classes.len();
        if k < 2 || k > have {
            return Err(Error::Scene(format!("class count must lie in 2..={have}, got {k}")));
        }
        if k < have {
            self.classes.truncate(k);
            self.classes[k - 1].name = "other".into();
            for p in &mut self.primitives {
                p.class = p.class.min(k - 1);
            }
        }
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_points == 0 {
            return Err(Error::Scene("point count must be positive".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::Scene("no classes".into()));
        }
        if self.primitives.is_empty() {
            return Err(Error::Scene("no primitives".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Scene(format!("invalid noise {}", self.noise)));
        }
        const TOL: f64 = 1e-9;
        let inside = |p: Point3| {
            (-TOL..=self.room.x + TOL).contains(&p.x)
                && (-TOL..=self.room.y + TOL).contains(&p.y)
                && (-TOL..=self.room.z + TOL).contains(&p.z)
        };
        for (i, prim) in self.primitives.iter().enumerate() {
            if prim.class >= self.classes.len() {
                return Err(Error::Scene(format!("primitive {i} has class {} >= {}", prim.class, self.classes.len())));
            }
            let faces = prim.faces();
            if faces.iter().any(|f| !(f.area() > 0.0)) {
                return Err(Error::Scene(format!("primitive {i} is degenerate (zero area)")));
            }
            for f in &faces {
                for corner in [f.at(0.0, 0.0), f.at(1.0, 0.0), f.at(0.0, 1.0), f.at(1.0, 1.0)] {
                    if !inside(corner) {
                        return Err(Error::Scene(format!("primitive {i} leaves the room extents")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn to_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn quantize_color(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Samples a labeled cloud from `spec`; identical specs give bitwise
/// identical clouds.
pub fn generate(spec: &SceneSpec) -> Result<LabeledCloud> {
    spec.validate()?;
    let faces: Vec<(usize, Face)> = spec
        .primitives
        .iter()
        .flat_map(|p| p.faces().into_iter().map(move |f| (p.class, f)))
        .collect();
    let mut cumulative = Vec::with_capacity(faces.len());
    let mut total = 0.0;
    for (_, f) in &faces {
        total += f.area();
        cumulative.push(total);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Uniform::new(0.0, 1.0).expect("unit interval");
    let noise = (spec.noise > 0.0).then(|| Normal::new(0.0, spec.noise).expect("noise sigma"));
    let n = spec.num_points;
    let mut cloud = LabeledCloud {
        positions: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
        normals: spec.normals.then(|| Vec::with_capacity(n)),
        labels: Vec::with_capacity(n),
        num_classes: spec.classes.len(),
    };
    for _ in 0..n {
        let r = unit.sample(&mut rng) * total;
        let which = cumulative.partition_point(|&c| c <= r).min(faces.len() - 1);
        let (class, face) = faces[which];
        let mut p = face.at(unit.sample(&mut rng), unit.sample(&mut rng));
        if let Some(dist) = &noise {
            p = p + Point3::new(dist.sample(&mut rng), dist.sample(&mut rng), dist.sample(&mut rng));
        }
        let cs = &spec.classes[class];
        let mut color = [0.0; 3];
        for (c, &mean) in color.iter_mut().zip(&cs.color) {
            let jitter = if cs.jitter > 0.0 {
                Normal::new(0.0, cs.jitter).expect("jitter sigma").sample(&mut rng)
            } else {
                0.0
            };
            *c = quantize_color(mean + jitter);
        }
        cloud.positions.push(Point3::new(to_f32(p.x), to_f32(p.y), to_f32(p.z)));
        cloud.colors.push(color);
        if let Some(normals) = &mut cloud.normals {
            let nv = face.normal();
            normals.push(Point3::new(to_f32(nv.x), to_f32(nv.y), to_f32(nv.z)));
        }
        cloud.labels.push(class);
    }
    Ok(cloud)
}

/// Splits scenes into disjoint train/test lists. Scenes are ordered by seed
/// first, so the split does not depend on the input order.
pub fn train_test_split(specs: &[SceneSpec], ratio: f64) -> Result<(Vec<SceneSpec>, Vec<SceneSpec>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Scene(format!("split ratio {ratio} outside [0, 1]")));
    }
    let mut sorted = specs.to_vec();
    sorted.sort_by_key(|s| s.seed);
    let n_train = (ratio * sorted.len() as f64).round() as usize;
    if n_train == 0 || n_train >= sorted.len() {
        return Err(Error::Scene(format!(
            "split of {} scenes at ratio {ratio} leaves an empty side",
            sorted.len()
        )));
    }
    let test = sorted.split_off(n_train);
    Ok((sorted, test))
}
