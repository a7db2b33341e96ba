//! Shared point encoder with boundary, direction and segmentation decoders.
//!
//! The encoder is a PointNet++-style stack: a point-wise layer at full
//! resolution, then at each coarser level a shared layer over
//! `(neighbor feature ⊕ relative position)` max-pooled per group. Each
//! decoder stream upsamples level by level, concatenating the encoder skip
//! features. The segmentation stream may use guided propagation, reading the
//! boundary probability and interior direction predicted at the target
//! resolution: from the full-resolution heads at level 0 and from small
//! auxiliary heads at coarser levels.

pub mod checkpoint;
mod params;

pub use params::{xavier_uniform, ParamStore};

use crate::geometry::{build_pyramid_with, LevelPyramid};
use crate::propagation::{self, Affine, GuidanceVars, PropagationConfig, PropagationLink, PropagationMode};
use crate::synthgen::LabeledCloud;
use crate::tensor::{Tape, Tensor, Var};
use crate::losses::LossConfig;
use crate::{Error, Result};

/// Smallest standard deviation used when standardizing an input column.
pub const INPUT_STD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidancePlacement {
    /// Guided propagation at every segmentation stage.
    AllStages,
    /// Only the last (full-resolution) stage is guided.
    FinalStageOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    pub boundary: bool,
    pub direction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Nominal point counts per level; clouds of another size are scaled
    /// proportionally (see [`NetworkConfig::level_sizes_for`]).
    pub level_sizes: Vec<usize>,
    /// Group size for each level after the first.
    pub group_k: Vec<usize>,
    pub widths: Vec<usize>,
    pub num_classes: usize,
    /// Per-point input features (colors, normals); xyz is always appended.
    pub feature_dim: usize,
    pub propagation: PropagationConfig,
    pub placement: GuidancePlacement,
    pub streams: Streams,
    pub fps_seed: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            level_sizes: vec![4096, 1024, 256],
            group_k: vec![16, 16],
            widths: vec![32, 64, 128],
            num_classes: 6,
            feature_dim: 6,
            propagation: PropagationConfig::default(),
            placement: GuidancePlacement::AllStages,
            streams: Streams {
                boundary: true,
                direction: true,
            },
            fps_seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn num_levels(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn input_width(&self) -> usize {
        self.feature_dim + 3
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.level_sizes.len();
        let bad = |msg: String| Err(Error::Network(msg));
        if l == 0 {
            return bad("at least one level is required".into());
        }
        if self.widths.len() != l || self.group_k.len() + 1 != l {
            return bad(format!(
                "{l} levels need {l} widths and {} group sizes, got {} and {}",
                l - 1,
                self.widths.len(),
                self.group_k.len()
            ));
        }
        if self.level_sizes.windows(2).any(|w| w[1] >= w[0]) || self.level_sizes.contains(&0) {
            return bad(format!("level sizes {:?} must be positive and decreasing", self.level_sizes));
        }
        if self.widths.contains(&0) || self.group_k.contains(&0) {
            return bad("widths and group sizes must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        self.propagation.validate()?;
        if self.propagation.mode == PropagationMode::Guided && !(self.streams.boundary && self.streams.direction) {
            return bad("guided propagation needs both the boundary and the direction stream".into());
        }
        Ok(())
    }

    /// Level sizes for a cloud of `n` points: the nominal sizes when `n`
    /// matches, otherwise scaled by `n / level_sizes[0]` and kept strictly
    /// decreasing and at least 1.
    pub fn level_sizes_for(&self, n: usize) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::Scene("empty cloud".into()));
        }
        if n == self.level_sizes[0] {
            return Ok(self.level_sizes.clone());
        }
        let mut sizes = vec![n];
        for &s in &self.level_sizes[1..] {
            let prev = *sizes.last().unwrap();
            let scaled = ((s as f64) * n as f64 / self.level_sizes[0] as f64).round() as usize;
            let v = scaled.max(1).min(prev.saturating_sub(1));
            if v == 0 {
                return Err(Error::Scene(format!(
                    "{n} points are too few for {} levels",
                    self.level_sizes.len()
                )));
            }
            sizes.push(v);
        }
        Ok(sizes)
    }

    pub fn build_pyramid(&self, cloud: &LabeledCloud) -> Result<LevelPyramid> {
        let sizes = self.level_sizes_for(cloud.len())?;
        Ok(build_pyramid_with(
            &cloud.positions,
            &sizes,
            self.propagation.k,
            &self.group_k,
            self.fps_seed,
        )?)
    }

    fn guided_at(&self, target_level: usize) -> bool {
        self.propagation.mode == PropagationMode::Guided
            && (self.placement == GuidancePlacement::AllStages || target_level == 0)
    }
}

/// Configurations of the five ablation rows: (1) segmentation only,
/// (2) plus boundary stream, (3) plus direction stream, (4) all streams with
/// standard propagation, (5) all streams with guided propagation.
pub fn ablation_variant(id: u8, net: &NetworkConfig, loss: &LossConfig) -> Result<(NetworkConfig, LossConfig)> {
    let (boundary, direction, mode) = match id {
        1 => (false, false, PropagationMode::Standard),
        2 => (true, false, PropagationMode::Standard),
        3 => (false, true, PropagationMode::Standard),
        4 => (true, true, PropagationMode::Standard),
        5 => (true, true, PropagationMode::Guided),
        _ => return Err(Error::Network(format!("variant must be 1..=5, got {id}"))),
    };
    let mut n = net.clone();
    n.streams = Streams { boundary, direction };
    n.propagation.mode = mode;
    let mut l = loss.clone();
    if !boundary {
        l.lambda1 = 0.0;
    }
    if !direction {
        l.lambda2 = 0.0;
    }
    Ok((n, l))
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
}

impl Dense {
    fn bind(self, p: &[Var]) -> Affine {
        Affine {
            weight: p[self.w],
            bias: p[self.b],
        }
    }
}

#[derive(Debug, Clone)]
struct StreamLayout {
    /// `stages[l - 1]` maps level `l` to level `l − 1`.
    stages: Vec<Dense>,
    head: Dense,
    /// `aux[m]` is the head at level `m` (index 0 unused).
    aux: Vec<Option<Dense>>,
}

#[derive(Debug, Clone)]
struct Layout {
    input: Dense,
    encoder: Vec<Dense>,
    seg: StreamLayout,
    boundary: Option<StreamLayout>,
    direction: Option<StreamLayout>,
}

/// Per-level guidance logits from the boundary and direction streams.
/// Index `m` is level `m`; entries are `None` where no head exists.
#[derive(Debug, Clone, Default)]
pub struct GuidanceLogits {
    pub boundary: Vec<Option<Var>>,
    pub direction: Vec<Option<Var>>,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelOutputs {
    pub seg_logits: Var,
    pub seg_probs: Var,
    pub boundary_logits: Option<Var>,
    /// `[N×1]` probability of the boundary class.
    pub boundary_prob: Option<Var>,
    pub direction_raw: Option<Var>,
    pub direction_unit: Option<Var>,
}

/// Network structure plus initialized parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: NetworkConfig,
    layout: Layout,
    pub params: ParamStore,
}

impl Model {
    /// Xavier-uniform weights and zero biases, all derived from `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut dense = |name: &str, fan_in: usize, fan_out: usize| Dense {
            w: params.push(format!("{name}.w"), xavier_uniform(seed, &format!("{name}.w"), fan_in, fan_out)),
            b: params.push(format!("{name}.b"), Tensor::zeros(1, fan_out)),
        };
        let w = &config.widths;
        let levels = w.len();
        let input = dense("input", config.input_width(), w[0]);
        let encoder = (1..levels).map(|l| dense(&format!("enc{l}"), w[l - 1] + 3, w[l])).collect();
        let mut stream = |name: &str, out: usize, aux: bool| {
            let stages = (1..levels).map(|l| dense(&format!("{name}.up{l}"), w[l] + w[l - 1], w[l - 1])).collect();
            let head = dense(&format!("{name}.head"), w[0], out);
            let aux = (0..levels.saturating_sub(1))
                .map(|m| (aux && m >= 1).then(|| dense(&format!("{name}.aux{m}"), w[m], out)))
                .collect();
            StreamLayout { stages, head, aux }
        };
        let with_aux = config.placement == GuidancePlacement::AllStages;
        let seg = stream("seg", config.num_classes, false);
        let boundary = config.streams.boundary.then(|| stream("bnd", 2, with_aux));
        let direction = config.streams.direction.then(|| stream("dir", 3, with_aux));
        let layout = Layout {
            input,
            encoder,
            seg,
            boundary,
            direction,
        };
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// `[N × (F + 3)]` input: features then xyz, each column standardized
    /// over the cloud.
    pub fn input_tensor(&self, cloud: &LabeledCloud) -> Result<Tensor> {
        if cloud.feature_dim() != self.config.feature_dim {
            return Err(Error::Mismatch(format!(
                "cloud has {} input features, network expects {}",
                cloud.feature_dim(),
                self.config.feature_dim
            )));
        }
        let f = cloud.features();
        let w = self.config.input_width();
        let mut data = Vec::with_capacity(cloud.len() * w);
        for (i, p) in cloud.positions.iter().enumerate() {
            data.extend_from_slice(f.row(i));
            data.extend_from_slice(&p.to_array());
        }
        let n = cloud.len() as f64;
        for j in 0..w {
            let mean = data.iter().skip(j).step_by(w).sum::<f64>() / n;
            let var = data.iter().skip(j).step_by(w).map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let sd = var.sqrt().max(INPUT_STD_FLOOR);
            for x in data.iter_mut().skip(j).step_by(w) {
                *x = (*x - mean) / sd;
            }
        }
        Ok(Tensor::new(cloud.len(), self.config.input_width(), data)?)
    }

    fn check(&self, p: &[Var], pyramid: &LevelPyramid) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(Error::Mismatch(format!("{} parameter vars for {} parameters", p.len(), self.params.len())));
        }
        if pyramid.num_levels() != self.config.num_levels() {
            return Err(Error::Network(format!(
                "pyramid has {} levels, network {}",
                pyramid.num_levels(),
                self.config.num_levels()
            )));
        }
        Ok(())
    }

    /// Per-level encoder features; level `l` is `[len(l) × widths[l]]`.
    pub fn encode(&self, tape: &mut Tape, p: &[Var], input: Var, pyramid: &LevelPyramid) -> Result<Vec<Var>> {
        self.check(p, pyramid)?;
        if tape.value(input).shape() != [pyramid.level(0).len(), self.config.input_width()] {
            return Err(Error::Mismatch(format!(
                "input shape {:?} for {} points of width {}",
                tape.value(input).shape(),
                pyramid.level(0).len(),
                self.config.input_width()
            )));
        }
        let h = self.layout.input.bind(p).apply(tape, input)?;
        let mut feats = vec![tape.relu(h)];
        for l in 1..pyramid.num_levels() {
            let (fine, coarse) = (pyramid.level(l - 1), pyramid.level(l));
            let kg = coarse.k_group;
            let mut rel = Vec::with_capacity(coarse.group_neighbors.len() * 3);
            for (c, centre) in coarse.points.iter().enumerate() {
                for &j in coarse.group_row(c) {
                    rel.extend_from_slice(&(fine.points[j] - *centre).to_array());
                }
            }
            let grouped = tape.gather(feats[l - 1], &coarse.group_neighbors)?;
            let rel = tape.constant(Tensor::new(coarse.group_neighbors.len(), 3, rel)?);
            let joined = tape.concat(grouped, rel)?;
            let h = self.layout.encoder[l - 1].bind(p).apply(tape, joined)?;
            let h = tape.relu(h);
            let groups: Vec<usize> = (0..coarse.group_neighbors.len()).collect();
            feats.push(tape.grouped_max_pool(h, &groups, kg)?);
        }
        Ok(feats)
    }

    fn link(pyramid: &LevelPyramid, l: usize) -> PropagationLink<'_> {
        let (fine, coarse) = (pyramid.level(l - 1), pyramid.level(l));
        PropagationLink {
            targets: &fine.points,
            sources: &coarse.points,
            table: &coarse.up_neighbors,
            k: coarse.k_up,
        }
    }

    /// Runs one decoder stream; `guidance(m)` supplies guidance for the stage
    /// targeting level `m`. Returns the decoder features per level (top
    /// level is the encoder output).
    fn run_stream(
        &self,
        tape: &mut Tape,
        p: &[Var],
        layout: &StreamLayout,
        enc: &[Var],
        pyramid: &LevelPyramid,
        guidance: &[Option<GuidanceVars>],
    ) -> Result<Vec<Var>> {
        let levels = enc.len();
        let mut dec = vec![enc[levels - 1]; levels];
        for l in (1..levels).rev() {
            let link = Self::link(pyramid, l);
            let phi = layout.stages[l - 1].bind(p);
            let g = guidance.get(l - 1).copied().flatten();
            let cfg = &self.config.propagation;
            dec[l - 1] = match g {
                Some(g) => propagation::guided_propagate(tape, dec[l], Some(enc[l - 1]), &link, g, phi, cfg)?,
                None => propagation::standard_propagate(tape, dec[l], Some(enc[l - 1]), &link, phi, cfg)?,
            };
        }
        Ok(dec)
    }

    /// Boundary and direction streams with their per-level heads.
    pub fn decode_guidance(&self, tape: &mut Tape, p: &[Var], enc: &[Var], pyramid: &LevelPyramid) -> Result<GuidanceLogits> {
        let levels = enc.len();
        let mut out = GuidanceLogits {
            boundary: vec![None; levels],
            direction: vec![None; levels],
        };
        for (layout, slot) in [
            (&self.layout.boundary, &mut out.boundary),
            (&self.layout.direction, &mut out.direction),
        ] {
            let Some(layout) = layout else { continue };
            let dec = self.run_stream(tape, p, layout, enc, pyramid, &[])?;
            slot[0] = Some(layout.head.bind(p).apply(tape, dec[0])?);
            for (m, aux) in layout.aux.iter().enumerate() {
                if let Some(aux) = aux {
                    slot[m] = Some(aux.bind(p).apply(tape, dec[m])?);
                }
            }
        }
        Ok(out)
    }

    /// Boundary-class probability and unit direction from raw head outputs.
    pub fn guidance_fields(tape: &mut Tape, boundary_logits: Var, direction_raw: Var) -> Result<GuidanceVars> {
        let probs = tape.softmax(boundary_logits)?;
        Ok(GuidanceVars {
            boundary_prob: tape.column(probs, 1)?,
            direction: propagation::normalize_rows(tape, direction_raw),
        })
    }

    /// Guidance for each segmentation stage target level, `None` where the
    /// stage is not guided.
    pub fn stage_guidance(&self, tape: &mut Tape, logits: &GuidanceLogits) -> Result<Vec<Option<GuidanceVars>>> {
        let levels = self.config.num_levels();
        let mut out = vec![None; levels];
        for (m, slot) in out.iter_mut().enumerate().take(levels.saturating_sub(1)) {
            if !self.config.guided_at(m) {
                continue;
            }
            match (logits.boundary.get(m).copied().flatten(), logits.direction.get(m).copied().flatten()) {
                (Some(b), Some(d)) => *slot = Some(Self::guidance_fields(tape, b, d)?),
                _ => return Err(Error::Network(format!("missing guidance at level {m}"))),
            }
        }
        Ok(out)
    }

    /// Segmentation stream and head; returns `[N×K]` logits.
    pub fn decode_segmentation(
        &self,
        tape: &mut Tape,
        p: &[Var],
        enc: &[Var],
        pyramid: &LevelPyramid,
        guidance: &[Option<GuidanceVars>],
    ) -> Result<Var> {
        let dec = self.run_stream(tape, p, &self.layout.seg, enc, pyramid, guidance)?;
        self.layout.seg.head.bind(p).apply(tape, dec[0])
    }

    /// Full forward pass with parameters `p` (as bound by
    /// [`ParamStore::bind`]).
    pub fn forward_with(&self, tape: &mut Tape, p: &[Var], input: Var, pyramid: &LevelPyramid) -> Result<ModelOutputs> {
        let enc = self.encode(tape, p, input, pyramid)?;
        let logits = self.decode_guidance(tape, p, &enc, pyramid)?;
        let guidance = self.stage_guidance(tape, &logits)?;
        let seg_logits = self.decode_segmentation(tape, p, &enc, pyramid, &guidance)?;
        let seg_probs = tape.softmax(seg_logits)?;
        let boundary_logits = logits.boundary[0];
        let direction_raw = logits.direction[0];
        let boundary_prob = match boundary_logits {
            Some(b) => {
                let probs = tape.softmax(b)?;
                Some(tape.column(probs, 1)?)
            }
            None => None,
        };
        let direction_unit = direction_raw.map(|d| propagation::normalize_rows(tape, d));
        Ok(ModelOutputs {
            seg_logits,
            seg_probs,
            boundary_logits,
            boundary_prob,
            direction_raw,
            direction_unit,
        })
    }

    /// Forward pass on constant parameters.
    pub fn forward(&self, tape: &mut Tape, cloud: &LabeledCloud, pyramid: &LevelPyramid) -> Result<ModelOutputs> {
        let p = self.params.bind_constant(tape);
        let x = self.input_tensor(cloud)?;
        let input = tape.constant(x);
        self.forward_with(tape, &p, input, pyramid)
    }

    /// Per-point argmax class.
    pub fn predict(&self, cloud: &LabeledCloud, pyramid: &LevelPyramid) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, cloud, pyramid)?;
        Ok(argmax_rows(tape.value(out.seg_logits)))
    }
}

/// Index of each row's maximum; ties go to the lowest column.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
