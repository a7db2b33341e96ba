//! Confusion matrices, OA / IoU / mIoU, and boundary-region scores.

use crate::geometry::{KdTree, Point3};
use crate::groundtruth::BoundaryMap;
use crate::{Error, Result};

/// Default radius (meters) of the boundary region.
pub const DEFAULT_RHO: f64 = 0.1;

/// `K × K` counts; rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneMetrics {
    pub oa: f64,
    /// `None` for classes absent from both ground truth and prediction.
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
    pub points: u64,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, gt: &[usize], pred: &[usize]) -> Result<()> {
        self.accumulate_masked(gt, pred, None)
    }

    /// Counts only the points where `mask` is true.
    pub fn accumulate_masked(&mut self, gt: &[usize], pred: &[usize], mask: Option<&[bool]>) -> Result<()> {
        if gt.len() != pred.len() || mask.is_some_and(|m| m.len() != gt.len()) {
            return Err(Error::Mismatch(format!(
                "{} ground-truth labels, {} predictions",
                gt.len(),
                pred.len()
            )));
        }
        if let Some(&bad) = gt.iter().chain(pred).find(|&&l| l >= self.k) {
            return Err(Error::Mismatch(format!("label {bad} is not below K={}", self.k)));
        }
        for (i, (&g, &p)) in gt.iter().zip(pred).enumerate() {
            if mask.is_none_or(|m| m[i]) {
                self.counts[g * self.k + p] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Mismatch(format!("merging K={} into K={}", other.k, self.k)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn scores(&self) -> Result<SceneMetrics> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Mismatch("no points in confusion matrix".into()));
        }
        let k = self.k;
        let trace: u64 = (0..k).map(|c| self.get(c, c)).sum();
        let iou: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let gt_c: u64 = (0..k).map(|p| self.get(c, p)).sum();
                let pred_c: u64 = (0..k).map(|g| self.get(g, c)).sum();
                let union = gt_c + pred_c - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        let present: Vec<f64> = iou.iter().flatten().copied().collect();
        Ok(SceneMetrics {
            oa: trace as f64 / total as f64,
            miou: present.iter().sum::<f64>() / present.len() as f64,
            iou,
            points: total,
        })
    }
}

/// Points within `rho` of any ground-truth boundary point.
pub fn boundary_region_mask(positions: &[Point3], boundary: &BoundaryMap, rho: f64) -> Vec<bool> {
    let pts: Vec<Point3> = boundary.indices().iter().map(|&i| positions[i]).collect();
    if pts.is_empty() {
        return vec![false; positions.len()];
    }
    let tree = KdTree::new(&pts);
    let r2 = rho * rho;
    positions
        .iter()
        .map(|&p| tree.nearest(p, None).is_some_and(|(d2, _)| d2 <= r2))
        .collect()
}

/// Scores restricted to the boundary region; `None` when the region is empty.
pub fn boundary_region_scores(
    positions: &[Point3],
    boundary: &BoundaryMap,
    gt: &[usize],
    pred: &[usize],
    k: usize,
    rho: f64,
) -> Result<Option<SceneMetrics>> {
    let mut cm = ConfusionMatrix::new(k);
    let mask = boundary_region_mask(positions, boundary, rho);
    cm.accumulate_masked(gt, pred, Some(&mask))?;
    if cm.total() == 0 {
        return Ok(None);
    }
    cm.scores().map(Some)
}

/// `variant,seed,oa,miou[,boundary_miou],iou_<class>...`
pub fn csv_header(class_names: &[String], with_boundary: bool) -> String {
    let mut cols = vec!["variant".to_string(), "seed".into(), "oa".into(), "miou".into()];
    if with_boundary {
        cols.push("boundary_miou".into());
    }
    cols.extend(class_names.iter().map(|c| format!("iou_{c}")));
    cols.join(",")
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// One CSV row matching [`csv_header`]. `boundary` is `Some(None)` for an
/// empty boundary region (written as `NA`), `None` to omit the column.
pub fn csv_row(variant: &str, seed: u64, global: &SceneMetrics, boundary: Option<Option<&SceneMetrics>>) -> String {
    let mut cols = vec![variant.to_string(), seed.to_string(), fmt(Some(global.oa)), fmt(Some(global.miou))];
    if let Some(b) = boundary {
        cols.push(fmt(b.map(|m| m.miou)));
    }
    cols.extend(global.iou.iter().map(|&v| fmt(v)));
    cols.join(",")
}
