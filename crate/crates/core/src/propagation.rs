//! Coarse-to-fine feature propagation.
//!
//! Each fine point interpolates features from its `k` nearest coarse points.
//! The standard rule weights neighbors by `exp(−dist / r)`. The guided rule
//! adds a cosine term between the neighbor offset and the point's predicted
//! interior direction, gated by its predicted boundary probability:
//!
//! ```text
//! w_s = exp(−‖x_j − x_i‖ / r)
//! w_c = exp(P_b(x_i) − 1) · cos(x_j − x_i, d_i)
//! w   = max(0, w_s + α·w_c),   normalized over the k neighbors
//! ```
//!
//! Near a boundary (`P_b ≈ 1`) neighbors behind the point, on the far side of
//! the boundary, get weight zero.

use crate::geometry::Point3;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Offsets shorter than this have no direction; their cosine is 0.
pub const MIN_OFFSET: f64 = 1e-9;
/// Guard used when normalizing predicted directions.
pub const DIRECTION_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationMode {
    Standard,
    Guided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationConfig {
    pub alpha: f64,
    pub radius: f64,
    pub k: usize,
    pub mode: PropagationMode,
    /// Stop gradients from flowing into the guidance fields.
    pub detach_guidance: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            radius: 0.125,
            k: 3,
            mode: PropagationMode::Guided,
            detach_guidance: false,
        }
    }
}

impl PropagationConfig {
    pub fn standard() -> Self {
        Self {
            mode: PropagationMode::Standard,
            ..Self::default()
        }
    }

    /// The cosine coefficient actually applied: 0 in standard mode.
    pub fn effective_alpha(&self) -> f64 {
        match self.mode {
            PropagationMode::Standard => 0.0,
            PropagationMode::Guided => self.alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Network(format!("propagation radius must be positive, got {}", self.radius)));
        }
        if self.k == 0 {
            return Err(Error::Network("propagation k must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Network(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// `cos(offset, direction)`, defined as 0 for a degenerate offset or a zero
/// direction.
pub fn guided_cosine(offset: Point3, direction: Point3) -> f64 {
    let (on, dn) = (offset.norm(), direction.norm());
    if on < MIN_OFFSET || dn == 0.0 {
        return 0.0;
    }
    offset.dot(direction) / (on * dn.max(DIRECTION_EPS))
}

/// Cosine term `w_c = exp(P_b − 1) · cos(x_j − x_i, d_i)` for one neighbor.
pub fn cosine_term(target: Point3, boundary_prob: f64, direction: Point3, neighbor: Point3) -> f64 {
    (boundary_prob - 1.0).exp() * guided_cosine(neighbor - target, direction)
}

/// Normalized propagation weights of `neighbors` around `target`.
///
/// If every guided weight is clipped to zero the distance weights alone are
/// used, so the result always sums to 1.
pub fn propagation_weights(
    target: Point3,
    boundary_prob: f64,
    direction: Point3,
    neighbors: &[Point3],
    cfg: &PropagationConfig,
) -> Result<Vec<f64>> {
    if neighbors.is_empty() {
        return Err(Error::Network("propagation needs at least one neighbor".into()));
    }
    let alpha = cfg.effective_alpha();
    let ws: Vec<f64> = neighbors.iter().map(|&x| (-x.dist(target) / cfg.radius).exp()).collect();
    let mut w: Vec<f64> = if alpha == 0.0 {
        ws.clone()
    } else {
        neighbors
            .iter()
            .zip(&ws)
            .map(|(&x, &s)| (s + alpha * cosine_term(target, boundary_prob, direction, x)).max(0.0))
            .collect()
    };
    let mut total: f64 = w.iter().sum();
    if total <= 0.0 {
        w = ws;
        total = w.iter().sum();
    }
    if total <= 0.0 {
        // every neighbor is so far away that exp underflowed
        return Ok(vec![1.0 / neighbors.len() as f64; neighbors.len()]);
    }
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Geometry of one fine←coarse link: for every target point, `k` source rows.
#[derive(Debug, Clone, Copy)]
pub struct PropagationLink<'a> {
    pub targets: &'a [Point3],
    pub sources: &'a [Point3],
    /// Flat `targets.len() × k` table of indices into `sources`.
    pub table: &'a [usize],
    pub k: usize,
}

impl PropagationLink<'_> {
    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.table.len() != self.targets.len() * self.k {
            return Err(Error::Mismatch(format!(
                "neighbor table of length {} does not fit {} targets × k={}",
                self.table.len(),
                self.targets.len(),
                self.k
            )));
        }
        if let Some(&j) = self.table.iter().find(|&&j| j >= self.sources.len()) {
            return Err(Error::Mismatch(format!(
                "neighbor index {j} out of range for {} sources",
                self.sources.len()
            )));
        }
        Ok(())
    }

    /// Distance weights `[N×k]` and unit offsets `[N·k×3]`.
    fn geometry(&self, radius: f64) -> (Tensor, Tensor) {
        let n = self.targets.len();
        let mut ws = Vec::with_capacity(n * self.k);
        let mut unit = Vec::with_capacity(n * self.k * 3);
        for (i, &t) in self.targets.iter().enumerate() {
            for &j in &self.table[i * self.k..(i + 1) * self.k] {
                let off = self.sources[j] - t;
                let d = off.norm();
                ws.push((-d / radius).exp());
                let u = if d < MIN_OFFSET { Point3::ZERO } else { off * (1.0 / d) };
                unit.extend_from_slice(&u.to_array());
            }
        }
        (
            Tensor::new(n, self.k, ws).expect("weight layout"),
            Tensor::new(n * self.k, 3, unit).expect("offset layout"),
        )
    }
}

/// Per-target guidance on the tape: `boundary_prob [N×1]` and unit (or zero)
/// `direction [N×3]`.
#[derive(Debug, Clone, Copy)]
pub struct GuidanceVars {
    pub boundary_prob: Var,
    pub direction: Var,
}

/// One affine layer `x·W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub weight: Var,
    pub bias: Var,
}

impl Affine {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        Ok(tape.add_bias(y, self.bias)?)
    }
}

/// Normalizes each row of `v [N×3]` by `max(‖v‖, ε)`.
pub fn normalize_rows(tape: &mut Tape, v: Var) -> Var {
    let sq = tape.mul(v, v).expect("same shape");
    let n2 = tape.row_sum(sq);
    let norm = tape.sqrt(n2);
    let guarded = tape.clamp_min(norm, DIRECTION_EPS);
    tape.div_col(v, guarded).expect("column shape")
}

/// Normalized weight matrix `[N×k]` for `link` on the tape.
pub fn weight_tensor(
    tape: &mut Tape,
    link: &PropagationLink,
    guidance: Option<GuidanceVars>,
    cfg: &PropagationConfig,
) -> Result<Var> {
    link.validate()?;
    let (n, k) = (link.targets.len(), link.k);
    let (ws, unit) = link.geometry(cfg.radius);
    let alpha = cfg.effective_alpha();

    let Some(g) = guidance.filter(|_| cfg.mode == PropagationMode::Guided) else {
        let mut w = ws;
        for row in w.data_mut().chunks_mut(k) {
            let s: f64 = row.iter().sum();
            let s = if s > 0.0 { s } else { 1.0 };
            row.iter_mut().for_each(|v| *v /= s);
        }
        return Ok(tape.constant(w));
    };
    if tape.value(g.boundary_prob).shape() != [n, 1] || tape.value(g.direction).shape() != [n, 3] {
        return Err(Error::Mismatch(format!(
            "guidance shapes {:?} / {:?} do not match {n} targets",
            tape.value(g.boundary_prob).shape(),
            tape.value(g.direction).shape()
        )));
    }
    let (pb, dir) = if cfg.detach_guidance {
        (tape.detach(g.boundary_prob), tape.detach(g.direction))
    } else {
        (g.boundary_prob, g.direction)
    };

    let repeat: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let d_rep = tape.gather(dir, &repeat)?;
    let u = tape.constant(unit);
    let prod = tape.mul(d_rep, u)?;
    let cos_flat = tape.row_sum(prod);
    let cos = tape.reshape(cos_flat, n, k)?;
    let shifted = tape.add_scalar(pb, -1.0);
    let gate = tape.exp(shifted);
    let wc = tape.mul_col(cos, gate)?;
    let scaled = tape.scale(wc, alpha);
    let ws_var = tape.constant(ws.clone());
    let raw = tape.add(ws_var, scaled)?;
    let clipped = tape.relu(raw);

    let mut fallback = Tensor::zeros(n, k);
    let mut any_fallback = false;
    for i in 0..n {
        if tape.value(clipped).row(i).iter().all(|&v| v <= 0.0) {
            any_fallback = true;
            fallback.data_mut()[i * k..(i + 1) * k].copy_from_slice(ws.row(i));
        }
    }
    let w = if any_fallback {
        let f = tape.constant(fallback);
        tape.add(clipped, f)?
    } else {
        clipped
    };
    let total = tape.row_sum(w);
    Ok(tape.div_col(w, total)?)
}

/// Interpolate `coarse` onto the link targets, concatenate `skip`, then apply
/// `phi` and ReLU.
pub fn propagate(
    tape: &mut Tape,
    coarse: Var,
    skip: Option<Var>,
    link: &PropagationLink,
    guidance: Option<GuidanceVars>,
    phi: Affine,
    cfg: &PropagationConfig,
) -> Result<Var> {
    if tape.value(coarse).rows() != link.sources.len() {
        return Err(Error::Mismatch(format!(
            "{} coarse feature rows for {} source points",
            tape.value(coarse).rows(),
            link.sources.len()
        )));
    }
    let w = weight_tensor(tape, link, guidance, cfg)?;
    let interp = tape.weighted_gather(coarse, w, link.table)?;
    let joined = match skip {
        Some(s) => tape.concat(interp, s)?,
        None => interp,
    };
    let h = phi.apply(tape, joined)?;
    Ok(tape.relu(h))
}

/// Guided propagation; `guidance` drives the cosine term.
pub fn guided_propagate(
    tape: &mut Tape,
    coarse: Var,
    skip: Option<Var>,
    link: &PropagationLink,
    guidance: GuidanceVars,
    phi: Affine,
    cfg: &PropagationConfig,
) -> Result<Var> {
    let cfg = PropagationConfig {
        mode: PropagationMode::Guided,
        ..cfg.clone()
    };
    propagate(tape, coarse, skip, link, Some(guidance), phi, &cfg)
}

/// Distance-only propagation (α forced to 0).
pub fn standard_propagate(
    tape: &mut Tape,
    coarse: Var,
    skip: Option<Var>,
    link: &PropagationLink,
    phi: Affine,
    cfg: &PropagationConfig,
) -> Result<Var> {
    let cfg = PropagationConfig {
        mode: PropagationMode::Standard,
        ..cfg.clone()
    };
    propagate(tape, coarse, skip, link, None, phi, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, GradCheckConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_sided() -> (Point3, [Point3; 2]) {
        (Point3::ZERO, [Point3::new(0.1, 0.0, 0.0), Point3::new(-0.1, 0.0, 0.0)])
    }

    #[test]
    fn boundary_point_drops_opposed_neighbor() {
        let (t, nb) = two_sided();
        let w = propagation_weights(t, 1.0, Point3::new(1.0, 0.0, 0.0), &nb, &PropagationConfig::default()).unwrap();
        assert!((w[0] - 1.0).abs() <= 1e-12);
        assert_eq!(w[1], 0.0);
    }

    #[test]
    fn interior_point_keeps_both_neighbors() {
        let (t, nb) = two_sided();
        let w = propagation_weights(t, 0.0, Point3::new(1.0, 0.0, 0.0), &nb, &PropagationConfig::default()).unwrap();
        // hand arithmetic: exp(−0.8) ± exp(−1), then normalized
        let (a, b) = ((-0.8f64).exp() + (-1f64).exp(), (-0.8f64).exp() - (-1f64).exp());
        assert!((a - 0.817208).abs() < 1e-6 && (b - 0.081450).abs() < 1e-6);
        assert!((w[0] - 0.909365).abs() <= 1e-6);
        assert!((w[1] - 0.090635).abs() <= 1e-6);
    }

    #[test]
    fn zero_alpha_is_distance_only() {
        let t = Point3::new(0.2, 0.1, 0.0);
        let nb = [Point3::new(0.3, 0.1, 0.0), Point3::new(0.0, 0.0, 0.1), Point3::new(0.25, 0.4, -0.1)];
        let cfg = PropagationConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let ws: Vec<f64> = nb.iter().map(|x| (-x.dist(t) / 0.125).exp()).collect();
        let s: f64 = ws.iter().sum();
        for (pb, d) in [(0.0, Point3::new(1.0, 0.0, 0.0)), (0.9, Point3::new(0.0, -1.0, 0.0))] {
            let w = propagation_weights(t, pb, d, &nb, &cfg).unwrap();
            for (a, b) in w.iter().zip(&ws) {
                assert!((a - b / s).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn equidistant_standard_weights_are_uniform() {
        let nb = [Point3::new(0.1, 0.0, 0.0), Point3::new(0.0, 0.1, 0.0), Point3::new(0.0, 0.0, -0.1)];
        let w = propagation_weights(Point3::ZERO, 0.5, Point3::new(1.0, 0.0, 0.0), &nb, &PropagationConfig::standard()).unwrap();
        for v in w {
            assert!((v - 1.0 / 3.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn gating_scales_cosine_term_exactly() {
        let t = Point3::new(0.0, 0.0, 0.0);
        let d = Point3::new(0.6, 0.8, 0.0);
        let x = Point3::new(0.05, -0.02, 0.03);
        let c = guided_cosine(x - t, d);
        assert!((cosine_term(t, 1.0, d, x) - c).abs() <= 1e-15);
        assert!((cosine_term(t, 0.0, d, x) - (-1f64).exp() * c).abs() <= 1e-15);
    }

    #[test]
    fn degenerate_offsets_and_directions_have_zero_cosine() {
        assert_eq!(guided_cosine(Point3::ZERO, Point3::new(1.0, 0.0, 0.0)), 0.0);
        assert_eq!(guided_cosine(Point3::new(1.0, 0.0, 0.0), Point3::ZERO), 0.0);
    }

    #[test]
    fn all_clipped_falls_back_to_distance_weights() {
        // both neighbors opposed to the direction at a certain boundary
        let nb = [Point3::new(-0.1, 0.0, 0.0), Point3::new(-0.2, 0.0, 0.0)];
        let w = propagation_weights(Point3::ZERO, 1.0, Point3::new(1.0, 0.0, 0.0), &nb, &PropagationConfig::default()).unwrap();
        let ws = [(-0.8f64).exp(), (-1.6f64).exp()];
        let s = ws[0] + ws[1];
        assert!((w[0] - ws[0] / s).abs() <= 1e-15);
        assert!((w[1] - ws[1] / s).abs() <= 1e-15);
        assert!(propagation_weights(Point3::ZERO, 1.0, Point3::ZERO, &[], &PropagationConfig::default()).is_err());
    }

    fn random_link(rng: &mut ChaCha8Rng, n: usize, m: usize, k: usize) -> (Vec<Point3>, Vec<Point3>, Vec<usize>) {
        let mut p = || Point3::new(rng.random_range(0.0..0.3), rng.random_range(0.0..0.3), rng.random_range(0.0..0.3));
        let targets: Vec<Point3> = (0..n).map(|_| p()).collect();
        let sources: Vec<Point3> = (0..m).map(|_| p()).collect();
        let table = targets
            .iter()
            .flat_map(|&t| crate::geometry::brute_force_knn(&sources, t, k, None))
            .collect();
        (targets, sources, table)
    }

    #[test]
    fn tensor_weights_match_scalar_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (targets, sources, table) = random_link(&mut rng, 40, 12, 3);
        let pb: Vec<f64> = (0..40).map(|_| rng.random()).collect();
        let dirs: Vec<Point3> = (0..40)
            .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalized().unwrap())
            .collect();
        let cfg = PropagationConfig::default();
        let mut tape = Tape::new();
        let g = GuidanceVars {
            boundary_prob: tape.constant(Tensor::new(40, 1, pb.clone()).unwrap()),
            direction: tape.constant(Tensor::new(40, 3, dirs.iter().flat_map(|d| d.to_array()).collect()).unwrap()),
        };
        let link = PropagationLink { targets: &targets, sources: &sources, table: &table, k: 3 };
        let w = weight_tensor(&mut tape, &link, Some(g), &cfg).unwrap();
        for i in 0..40 {
            let nb: Vec<Point3> = table[i * 3..i * 3 + 3].iter().map(|&j| sources[j]).collect();
            let expect = propagation_weights(targets[i], pb[i], dirs[i], &nb, &cfg).unwrap();
            for (a, b) in tape.value(w).row(i).iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-12, "row {i}");
            }
            assert!((tape.value(w).row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn nearest_neighbor_upsampling_with_k1() {
        let targets = [Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        let sources = [Point3::new(0.9, 0.0, 0.0), Point3::new(0.1, 0.0, 0.0)];
        let table = [1, 0];
        let link = PropagationLink { targets: &targets, sources: &sources, table: &table, k: 1 };
        let mut tape = Tape::new();
        let coarse = tape.constant(Tensor::from_rows(&[[1.0, -2.0], [-3.0, 4.0]]).unwrap());
        let skip = tape.constant(Tensor::zeros(2, 1));
        let w = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
        let phi = Affine { weight: tape.constant(w), bias: tape.constant(Tensor::zeros(1, 2)) };
        let out = standard_propagate(&mut tape, coarse, Some(skip), &link, phi, &PropagationConfig::default()).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 4.0, 1.0, 0.0]);
    }

    fn guided_setup(rng: &mut ChaCha8Rng) -> (Vec<Point3>, Vec<Point3>, Vec<usize>, Vec<Tensor>) {
        let (targets, sources, table) = random_link(rng, 12, 6, 3);
        let mut t = |r, c, s: f64| Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-s..s)).collect()).unwrap();
        let inputs = vec![
            t(6, 4, 1.0),   // coarse
            t(12, 2, 1.0),  // skip
            t(6, 5, 0.5),   // W
            t(1, 5, 0.1),   // b
            t(12, 1, 3.0),  // boundary logit
            t(12, 3, 1.0),  // raw direction
        ];
        (targets, sources, table, inputs)
    }

    #[test]
    fn guided_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (targets, sources, table, inputs) = guided_setup(&mut rng);
        let cfg = PropagationConfig::default();
        let f = |tape: &mut Tape, v: &[Var]| -> Result<Var> {
            let link = PropagationLink { targets: &targets, sources: &sources, table: &table, k: 3 };
            let neg = tape.neg(v[4]);
            let e = tape.exp(neg);
            let one_plus = tape.add_scalar(e, 1.0);
            let one = tape.constant(Tensor::filled(12, 1, 1.0));
            let pb = tape.div(one, one_plus)?;
            let dir = normalize_rows(tape, v[5]);
            let g = GuidanceVars { boundary_prob: pb, direction: dir };
            let out = guided_propagate(tape, v[0], Some(v[1]), &link, g, Affine { weight: v[2], bias: v[3] }, &cfg)?;
            Ok(tape.sum(out))
        };
        let report = check_gradients(&inputs, f, &GradCheckConfig::default()).unwrap();
        assert!(report.checks.len() >= 100, "{} coordinates", report.checks.len());
        assert!(report.passes(1e-4), "worst {:?}", report.worst());
        // gradient reaches the guidance logits
        assert!(report.checks.iter().any(|c| c.input == 4 && c.analytic.abs() > 1e-8));
    }

    #[test]
    fn detached_guidance_receives_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (targets, sources, table, inputs) = guided_setup(&mut rng);
        for detach in [false, true] {
            let cfg = PropagationConfig { detach_guidance: detach, ..Default::default() };
            let mut tape = Tape::new();
            let v: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
            let link = PropagationLink { targets: &targets, sources: &sources, table: &table, k: 3 };
            let logits = tape_concat_zero(&mut tape, v[4]);
            let probs = tape.softmax(logits).unwrap();
            let pb = tape.column(probs, 1).unwrap();
            let dir = normalize_rows(&mut tape, v[5]);
            let g = GuidanceVars { boundary_prob: pb, direction: dir };
            let out = guided_propagate(&mut tape, v[0], Some(v[1]), &link, g, Affine { weight: v[2], bias: v[3] }, &cfg).unwrap();
            let loss = tape.sum(out);
            tape.backward(loss).unwrap();
            let gsum: f64 = tape.grad(v[4]).map_or(0.0, |g| g.data().iter().map(|x| x.abs()).sum());
            assert_eq!(gsum > 0.0, !detach);
        }
    }

    fn tape_concat_zero(tape: &mut Tape, logit: Var) -> Var {
        let rows = tape.value(logit).rows();
        let z = tape.constant(Tensor::zeros(rows, 1));
        tape.concat(z, logit).unwrap()
    }

    #[test]
    fn guided_with_zero_alpha_equals_standard() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (targets, sources, table, inputs) = guided_setup(&mut rng);
        let link = PropagationLink { targets: &targets, sources: &sources, table: &table, k: 3 };
        let run = |mode, alpha| {
            let mut tape = Tape::new();
            let v: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let pb = tape.clamp_min(v[4], 0.0);
            let dir = normalize_rows(&mut tape, v[5]);
            let cfg = PropagationConfig { mode, alpha, ..Default::default() };
            let g = GuidanceVars { boundary_prob: pb, direction: dir };
            let out = propagate(&mut tape, v[0], Some(v[1]), &link, Some(g), Affine { weight: v[2], bias: v[3] }, &cfg).unwrap();
            tape.value(out).clone()
        };
        let a = run(PropagationMode::Guided, 0.0);
        let b = run(PropagationMode::Standard, 1.0);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
        assert_ne!(run(PropagationMode::Guided, 1.0), b);
    }
}
