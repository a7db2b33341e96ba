//! Supervision terms for the three streams and their weighted total.
//!
//! ```text
//! L_B = −Σ [β·b̂·log b + (1−β)(1−b̂)·log(1−b)]
//! L_D = Σ ‖d − d̂‖²                 (valid points only)
//! L_S = −Σ log p(label)
//! L   = L_S + λ1·L_B + λ2·L_D
//! ```

use crate::groundtruth::{BoundaryMap, DirectionMap};
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    /// Divide by the number of contributing points.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 0.6,
            lambda1: 3.0,
            lambda2: 0.3,
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Network(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Network("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub l_s: f64,
    pub l_b: f64,
    pub l_d: f64,
    pub total: f64,
}

impl LossReport {
    pub fn combine(l_s: f64, l_b: f64, l_d: f64, cfg: &LossConfig) -> Self {
        Self {
            l_s,
            l_b,
            l_d,
            total: l_s + cfg.lambda1 * l_b + cfg.lambda2 * l_d,
        }
    }
}

fn reduce(tape: &mut Tape, summed: Var, count: usize, reduction: Reduction) -> Var {
    match reduction {
        Reduction::Sum => summed,
        Reduction::Mean if count > 0 => tape.scale(summed, 1.0 / count as f64),
        Reduction::Mean => summed,
    }
}

fn check_rows(tape: &Tape, v: Var, rows: usize, cols: usize, what: &str) -> Result<()> {
    let shape = tape.value(v).shape();
    if shape != [rows, cols] {
        return Err(Error::Mismatch(format!("{what}: expected {rows}x{cols}, got {shape:?}")));
    }
    Ok(())
}

/// Weighted binary cross entropy; `probs` is the `[N×1]` boundary-class
/// probability. Logs are clamped at [`crate::tensor::LOG_CLAMP`].
pub fn boundary_loss(tape: &mut Tape, probs: Var, gt: &BoundaryMap, cfg: &LossConfig) -> Result<Var> {
    let n = gt.len();
    check_rows(tape, probs, n, 1, "boundary probabilities")?;
    let pos: Vec<f64> = gt.flags.iter().map(|&b| if b { cfg.beta } else { 0.0 }).collect();
    let neg: Vec<f64> = gt.flags.iter().map(|&b| if b { 0.0 } else { 1.0 - cfg.beta }).collect();
    let log_b = tape.log(probs);
    let flipped = tape.neg(probs);
    let one_minus = tape.add_scalar(flipped, 1.0);
    let log_1mb = tape.log(one_minus);
    let cp = tape.constant(Tensor::new(n, 1, pos)?);
    let cn = tape.constant(Tensor::new(n, 1, neg)?);
    let a = tape.mul(cp, log_b)?;
    let b = tape.mul(cn, log_1mb)?;
    let both = tape.add(a, b)?;
    let s = tape.sum(both);
    let l = tape.neg(s);
    Ok(reduce(tape, l, n, cfg.reduction))
}

/// Squared error over valid points; mean reduction divides by the valid
/// count, and no valid point gives 0.
pub fn direction_loss(tape: &mut Tape, pred: Var, gt: &DirectionMap, reduction: Reduction) -> Result<Var> {
    let n = gt.len();
    check_rows(tape, pred, n, 3, "direction predictions")?;
    let target: Vec<f64> = gt.vectors.iter().flat_map(|v| v.to_array()).collect();
    let mask: Vec<f64> = gt.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let t = tape.constant(Tensor::new(n, 3, target)?);
    let m = tape.constant(Tensor::new(n, 1, mask)?);
    let diff = tape.sub(pred, t)?;
    let masked = tape.mul_col(diff, m)?;
    let sq = tape.mul(masked, masked)?;
    let s = tape.sum(sq);
    Ok(reduce(tape, s, gt.valid_count(), reduction))
}

/// Cross entropy of `[N×K]` probabilities against class labels.
pub fn segmentation_loss(tape: &mut Tape, probs: Var, labels: &[usize], reduction: Reduction) -> Result<Var> {
    let k = tape.value(probs).cols();
    check_rows(tape, probs, labels.len(), k, "segmentation probabilities")?;
    if let Some(i) = labels.iter().position(|&l| l >= k) {
        return Err(Error::Mismatch(format!("label {} at point {i} is not below K={k}", labels[i])));
    }
    let p = tape.pick(probs, labels)?;
    let lp = tape.log(p);
    let s = tape.sum(lp);
    let l = tape.neg(s);
    Ok(reduce(tape, l, labels.len(), reduction))
}

/// `l_s + λ1·l_b + λ2·l_d` on the tape.
pub fn total_loss(tape: &mut Tape, l_s: Var, l_b: Option<Var>, l_d: Option<Var>, cfg: &LossConfig) -> Result<Var> {
    let mut total = l_s;
    for (term, weight) in [(l_b, cfg.lambda1), (l_d, cfg.lambda2)] {
        if let Some(t) = term {
            let w = tape.scale(t, weight);
            total = tape.add(total, w)?;
        }
    }
    Ok(total)
}
