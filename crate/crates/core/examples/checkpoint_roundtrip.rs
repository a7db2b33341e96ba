//! Trains briefly, saves a checkpoint, reloads it and confirms the rebuilt
//! model reproduces the logits bit for bit.

use pushbound::network::checkpoint::Checkpoint;
use pushbound::network::Model;
use pushbound::pipeline::{loss_csv, model_from_checkpoint, prepare_specs, train, TrainConfig};
use pushbound::tensor::Tape;

fn main() -> pushbound::Result<()> {
    let mut cfg = TrainConfig::default();
    cfg.epochs = 5;
    cfg.data.points = 512;
    cfg.data.train_scenes = 2;
    let (net, _) = cfg.resolved()?;
    let scenes = prepare_specs(&cfg.data.train_specs(), &Model::new(net, cfg.seed)?)?;
    let out = train(&cfg, &scenes)?;
    print!("{}", loss_csv(&out.log));

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.ckpt");
    out.checkpoint.save(&path)?;
    let bytes = std::fs::metadata(&path)?.len();
    let (_, rebuilt) = model_from_checkpoint(&Checkpoint::load(&path)?)?;

    let s = &scenes[0];
    let mut tape = Tape::new();
    let a = out.model.forward(&mut tape, &s.cloud, &s.pyramid)?;
    let b = rebuilt.forward(&mut tape, &s.cloud, &s.pyramid)?;
    let same = tape.value(a.seg_logits).data() == tape.value(b.seg_logits).data();
    println!("checkpoint {bytes} bytes, {} parameters, identical logits: {same}", rebuilt.parameter_count());
    Ok(())
}
