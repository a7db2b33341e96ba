use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::write_atomic;
use crate::geometry::Point3;
use crate::groundtruth::{BoundaryMap, DirectionMap};
use crate::synthgen::LabeledCloud;
use crate::{Error, Result};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlyError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("ASCII only: PLY format `{0}` is not supported")]
    AsciiOnly(String),
    #[error("expected {expected} vertex rows, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0}")]
    Length(String),
}

fn syntax(line: usize, message: impl Into<String>) -> Error {
    PlyError::Syntax {
        line,
        message: message.into(),
    }
    .into()
}

/// How vertex colors are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorMode {
    #[default]
    Original,
    /// Boundary points (from the boundary map) in pure red.
    BoundaryRed,
    /// Direction z-component as a blue (−1) to red (+1) ramp.
    DirectionZ,
}

/// A cloud plus the optional per-point layers stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyCloud {
    pub cloud: LabeledCloud,
    pub class_names: Vec<String>,
    pub boundary: Option<BoundaryMap>,
    pub directions: Option<DirectionMap>,
    pub predictions: Option<Vec<usize>>,
}

impl PlyCloud {
    pub fn new(cloud: LabeledCloud) -> Self {
        Self {
            cloud,
            class_names: Vec::new(),
            boundary: None,
            directions: None,
            predictions: None,
        }
    }

    fn validate(&self) -> Result<()> {
        self.cloud.validate()?;
        let n = self.cloud.len();
        let bad = |what: &str, len: usize| -> Result<()> {
            if len != n {
                return Err(PlyError::Length(format!("{what} has {len} entries for {n} points")).into());
            }
            Ok(())
        };
        if let Some(b) = &self.boundary {
            bad("boundary map", b.len())?;
        }
        if let Some(d) = &self.directions {
            bad("direction map", d.len())?;
        }
        if let Some(p) = &self.predictions {
            bad("predictions", p.len())?;
        }
        if self.class_names.iter().any(|c| c.is_empty() || c.contains(char::is_whitespace)) {
            return Err(PlyError::Length("class names must be non-empty single words".into()).into());
        }
        Ok(())
    }
}

fn float(out: &mut String, v: f64) {
    // shortest text that parses back to the same f32
    let _ = write!(out, " {}", v as f32);
}

fn byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn ramp(z: f64) -> [f64; 3] {
    let t = ((z + 1.0) / 2.0).clamp(0.0, 1.0);
    [t, 0.0, 1.0 - t]
}

pub fn to_ply_string(ply: &PlyCloud, mode: ColorMode) -> Result<String> {
    ply.validate()?;
    let c = &ply.cloud;
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "comment num_classes {}", c.num_classes);
    if !ply.class_names.is_empty() {
        let _ = writeln!(out, "comment class_names {}", ply.class_names.join(" "));
    }
    let _ = writeln!(out, "element vertex {}", c.len());
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    if c.normals.is_some() {
        out.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    out.push_str("property int label\n");
    if ply.boundary.is_some() {
        out.push_str("property uchar boundary\n");
    }
    if ply.directions.is_some() {
        out.push_str("property float dx\nproperty float dy\nproperty float dz\n");
    }
    if ply.predictions.is_some() {
        out.push_str("property int pred\n");
    }
    out.push_str("end_header\n");

    for i in 0..c.len() {
        let mut row = String::new();
        let p = c.positions[i];
        for v in [p.x, p.y, p.z] {
            float(&mut row, v);
        }
        let color = match mode {
            ColorMode::Original => c.colors[i],
            ColorMode::BoundaryRed => match &ply.boundary {
                Some(b) if b.flags[i] => [1.0, 0.0, 0.0],
                _ => c.colors[i],
            },
            ColorMode::DirectionZ => match &ply.directions {
                Some(d) if d.valid[i] => ramp(d.vectors[i].z),
                _ => c.colors[i],
            },
        };
        for v in color {
            let _ = write!(row, " {}", byte(v));
        }
        if let Some(n) = &c.normals {
            for v in n[i].to_array() {
                float(&mut row, v);
            }
        }
        let _ = write!(row, " {}", c.labels[i]);
        if let Some(b) = &ply.boundary {
            let _ = write!(row, " {}", u8::from(b.flags[i]));
        }
        if let Some(d) = &ply.directions {
            for v in d.vectors[i].to_array() {
                float(&mut row, v);
            }
        }
        if let Some(p) = &ply.predictions {
            let _ = write!(row, " {}", p[i]);
        }
        out.push_str(&row[1..]);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_ply(path: &Path, ply: &PlyCloud, mode: ColorMode) -> Result<()> {
    let text = to_ply_string(ply, mode)?;
    write_atomic(path, text.as_bytes())
}

pub fn read_ply(path: &Path) -> Result<PlyCloud> {
    let text = std::fs::read(path)?;
    // binary bodies are not UTF-8; only the header has to be
    let text = String::from_utf8_lossy(&text);
    parse_ply(&text)
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
}

pub fn parse_ply(text: &str) -> Result<PlyCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(syntax(1, "missing `ply` magic line")),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut num_classes: Option<usize> = None;
    let mut class_names = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;
    for (ln, raw) in lines.by_ref() {
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(PlyError::AsciiOnly(fmt.to_string()).into());
                }
                saw_format = true;
            }
            ["comment", "num_classes", k] => {
                num_classes = Some(k.parse().map_err(|_| syntax(ln, format!("bad class count `{k}`")))?);
            }
            ["comment", "class_names", names @ ..] => {
                class_names = names.iter().map(|s| s.to_string()).collect();
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| syntax(ln, format!("bad element count `{count}`")))?,
                properties: Vec::new(),
            }),
            ["property", "list", ..] => {
                return Err(syntax(ln, "list properties are not supported"));
            }
            ["property", _ty, name] => match elements.last_mut() {
                Some(e) => e.properties.push(name.to_string()),
                None => return Err(syntax(ln, "property before any element")),
            },
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(syntax(ln, format!("unrecognized header line `{raw}`"))),
        }
    }
    if !header_done {
        return Err(syntax(0, "missing end_header"));
    }
    if !saw_format {
        return Err(syntax(0, "missing format line"));
    }
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| syntax(0, "no vertex element"))?;
    let vertex = &elements[vertex_pos];
    let col = |name: &str| vertex.properties.iter().position(|p| p == name);
    let need = |name: &str| col(name).ok_or_else(|| syntax(0, format!("vertex element lacks property `{name}`")));
    let (xi, yi, zi, li) = (need("x")?, need("y")?, need("z")?, need("label")?);
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let triple = |a: &str, b: &str, c: &str| match (col(a), col(b), col(c)) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    let normals_cols = triple("nx", "ny", "nz");
    let dir_cols = triple("dx", "dy", "dz");
    let (bi, pi) = (col("boundary"), col("pred"));
    const KNOWN: [&str; 15] = [
        "x", "y", "z", "red", "green", "blue", "nx", "ny", "nz", "label", "boundary", "dx", "dy", "dz", "pred",
    ];
    for p in &vertex.properties {
        if !KNOWN.contains(&p.as_str()) {
            log::warn!("skipping unknown vertex property `{p}`");
        }
    }

    let n = vertex.count;
    let mut cloud = LabeledCloud {
        positions: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
        normals: normals_cols.map(|_| Vec::with_capacity(n)),
        labels: Vec::with_capacity(n),
        num_classes: 0,
    };
    let mut flags = bi.map(|_| Vec::with_capacity(n));
    let mut dirs = dir_cols.map(|_| Vec::with_capacity(n));
    let mut preds = pi.map(|_| Vec::with_capacity(n));

    let mut body = lines.filter(|(_, l)| !l.trim().is_empty());
    for (e_idx, e) in elements.iter().enumerate() {
        for row in 0..e.count {
            let Some((ln, line)) = body.next() else {
                if e_idx == vertex_pos {
                    return Err(PlyError::Truncated { expected: e.count, actual: row }.into());
                }
                return Err(syntax(0, format!("element `{}` has fewer than {} rows", e.name, e.count)));
            };
            if e_idx != vertex_pos {
                continue;
            }
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != e.properties.len() {
                return Err(syntax(ln, format!("expected {} values, found {}", e.properties.len(), vals.len())));
            }
            let num = |i: usize| -> Result<f64> {
                vals[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| syntax(ln, format!("`{}` is not a finite number", vals[i])))
            };
            let f32v = |i: usize| -> Result<f64> {
                vals[i]
                    .parse::<f32>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(f64::from)
                    .ok_or_else(|| syntax(ln, format!("`{}` is not a finite number", vals[i])))
            };
            let int = |i: usize| -> Result<usize> {
                vals[i]
                    .parse::<usize>()
                    .map_err(|_| syntax(ln, format!("`{}` is not a nonnegative integer", vals[i])))
            };
            let point = |c: [usize; 3]| -> Result<Point3> { Ok(Point3::new(f32v(c[0])?, f32v(c[1])?, f32v(c[2])?)) };
            cloud.positions.push(point([xi, yi, zi])?);
            cloud.colors.push(match rgb {
                Some(c) => {
                    let mut out = [0.0; 3];
                    for (o, &i) in out.iter_mut().zip(&c) {
                        let v = num(i)?;
                        if !(0.0..=255.0).contains(&v) {
                            return Err(syntax(ln, format!("color value {v} outside 0..=255")));
                        }
                        *o = v.round() / 255.0;
                    }
                    out
                }
                None => [0.5; 3],
            });
            if let (Some(c), Some(normals)) = (normals_cols, cloud.normals.as_mut()) {
                normals.push(point(c)?);
            }
            cloud.labels.push(int(li)?);
            if let (Some(i), Some(f)) = (bi, flags.as_mut()) {
                f.push(int(i)? != 0);
            }
            if let (Some(c), Some(d)) = (dir_cols, dirs.as_mut()) {
                d.push(point(c)?);
            }
            if let (Some(i), Some(p)) = (pi, preds.as_mut()) {
                p.push(int(i)?);
            }
        }
    }
    if let Some((ln, _)) = body.next() {
        return Err(syntax(ln, "data beyond the declared element counts"));
    }

    let max_label = cloud.labels.iter().chain(preds.iter().flatten()).max().map_or(0, |&m| m + 1);
    cloud.num_classes = num_classes.unwrap_or(max_label.max(2));
    if !class_names.is_empty() && class_names.len() != cloud.num_classes {
        return Err(syntax(0, format!("{} class names for {} classes", class_names.len(), cloud.num_classes)));
    }
    cloud.validate()?;
    let ply = PlyCloud {
        cloud,
        class_names,
        boundary: flags.map(|flags| BoundaryMap { flags }),
        directions: dirs.map(DirectionMap::from_vectors),
        predictions: preds,
    };
    if let Some(p) = &ply.predictions {
        if let Some(&bad) = p.iter().find(|&&v| v >= ply.cloud.num_classes) {
            return Err(PlyError::Length(format!("prediction {bad} is not below K={}", ply.cloud.num_classes)).into());
        }
    }
    Ok(ply)
}
