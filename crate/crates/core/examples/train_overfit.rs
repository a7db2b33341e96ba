//! Overfits the guided variant to a single synthetic scene and reports the
//! training accuracy.
//!
//! cargo run --release --example train_overfit [-- CONFIG]

use std::time::Instant;

use pushbound::network::Model;
use pushbound::pipeline::{evaluate_default, prepare_specs, train, TrainConfig};

fn main() -> pushbound::Result<()> {
    let mut cfg = match std::env::args().nth(1) {
        Some(path) => pushbound::config::load(path.as_ref(), TrainConfig::default())?,
        None => TrainConfig::default(),
    };
    cfg.data.train_scenes = 1;
    let (net, _) = cfg.resolved()?;
    let scenes = prepare_specs(&cfg.data.train_specs(), &Model::new(net, cfg.seed)?)?;
    let start = Instant::now();
    let out = train(&cfg, &scenes)?;
    let elapsed = start.elapsed();
    for e in out.log.iter().step_by((cfg.epochs / 10).max(1)) {
        println!("epoch {:>4}  loss {:.5}", e.epoch, e.loss.total);
    }
    let report = evaluate_default(&out.model, &scenes)?;
    println!("training OA {:.4}  mIoU {:.4}  ({:.1}s)", report.global.oa, report.global.miou, elapsed.as_secs_f64());
    for (name, iou) in pushbound::synthgen::INDOOR_CLASSES.iter().zip(&report.global.iou) {
        println!("  {name:<8} {}", iou.map_or("NA".into(), |v| format!("{v:.4}")));
    }
    Ok(())
}
