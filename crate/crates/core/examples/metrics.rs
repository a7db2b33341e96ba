//! Confusion-matrix metrics, the boundary-region restriction and the CSV
//! layout used by the evaluation tools.

use pushbound::geometry::Point3;
use pushbound::groundtruth::BoundaryMap;
use pushbound::metrics::{boundary_region_scores, csv_header, csv_row, ConfusionMatrix};

fn main() -> pushbound::Result<()> {
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&[0, 0, 1], &[0, 1, 1])?;
    let m = cm.scores()?;
    println!("OA {:.4}  mIoU {:.4}  IoU {:?}", m.oa, m.miou, m.iou);

    // eight points on a line, class seam between indices 3 and 4
    let positions: Vec<Point3> = (0..8).map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
    let gt = [0, 0, 0, 0, 1, 1, 1, 1];
    let pred = [0, 0, 0, 1, 1, 1, 1, 1];
    let boundary = BoundaryMap {
        flags: (0..8).map(|i| i == 3 || i == 4).collect(),
    };
    let mut all = ConfusionMatrix::new(2);
    all.accumulate(&gt, &pred)?;
    let global = all.scores()?;
    let region = boundary_region_scores(&positions, &boundary, &gt, &pred, 2, 0.15)?;

    let names = vec!["left".to_string(), "right".to_string()];
    println!("{}", csv_header(&names, true));
    println!("{}", csv_row("demo", 0, &global, Some(region.as_ref())));
    Ok(())
}
