//! Acceptance checks. Every criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails. Criteria run sequentially so their wall
//! times are not distorted by each other.

use std::io::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pushbound::geometry::Point3;
use pushbound::groundtruth::{self, brute_force, derive_maps};
use pushbound::io::{parse_ply, to_ply_string, ColorMode, PlyCloud};
use pushbound::losses::{self, LossConfig, LossReport, Reduction};
use pushbound::metrics::{csv_header, csv_row, ConfusionMatrix};
use pushbound::network::checkpoint::Checkpoint;
use pushbound::network::{ablation_variant, Model, NetworkConfig};
use pushbound::pipeline::{
    ablation_config, evaluate_default, model_from_checkpoint, prepare_specs, run_ablation, train, AblationSpec,
    PreparedScene, TrainConfig,
};
use pushbound::propagation::{propagation_weights, PropagationConfig};
use pushbound::synthgen::{generate, LabeledCloud, SceneSpec};
use pushbound::tensor::gradcheck::{check_gradients, GradCheckConfig};
use pushbound::tensor::{Tape, Tensor, Var};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> LabeledCloud {
    let k = rng.random_range(2..=4);
    let mut positions = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        // quantized coordinates produce exact distance ties
        let p = Point3::new(
            rng.random_range(0..16) as f64 / 8.0,
            rng.random_range(0..16) as f64 / 8.0,
            rng.random_range(0.0..1.0),
        );
        positions.push(p);
        labels.push(if p.x + 0.3 * p.y < 1.0 { 0 } else { rng.random_range(1..k) });
    }
    LabeledCloud {
        colors: vec![[0.5; 3]; n],
        positions,
        normals: None,
        labels,
        num_classes: k,
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut flags_equal = true;
    for i in 0..100 {
        let n = rng.random_range(8..=512);
        let cloud = if i % 2 == 0 {
            random_cloud(&mut rng, n)
        } else {
            generate(&SceneSpec::indoor_with(i, n, 0.005, false)).unwrap()
        };
        let fast_b = groundtruth::derive_boundary_map(&cloud, 4).unwrap();
        let slow_b = brute_force::derive_boundary_map(&cloud, 4).unwrap();
        flags_equal &= fast_b == slow_b;
        let fast_d = groundtruth::derive_direction_map(&cloud, &fast_b).unwrap();
        let slow_d = brute_force::derive_direction_map(&cloud, &slow_b).unwrap();
        flags_equal &= fast_d.valid == slow_d.valid;
        for (a, b) in fast_d.vectors.iter().zip(&slow_d.vectors) {
            worst = worst.max((*a - *b).norm());
        }
    }
    let t = start.elapsed();
    outcome(
        flags_equal && worst <= 1e-9 && within(t, 10.0),
        format!("100 clouds, flags equal {flags_equal}, max direction diff {worst:.1e}, {:.2}s", t.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let t = Point3::ZERO;
    let nb = [Point3::new(0.1, 0.0, 0.0), Point3::new(-0.1, 0.0, 0.0)];
    let d = Point3::new(1.0, 0.0, 0.0);
    let cfg = PropagationConfig::default();
    let edge = propagation_weights(t, 1.0, d, &nb, &cfg).unwrap();
    let inner = propagation_weights(t, 0.0, d, &nb, &cfg).unwrap();
    let err = (edge[0] - 1.0)
        .abs()
        .max(edge[1].abs())
        .max((inner[0] - 0.909365).abs())
        .max((inner[1] - 0.090635).abs());
    outcome(
        err <= 1e-6,
        format!("P_b=1 -> [{:.6}, {:.6}], P_b=0 -> [{:.6}, {:.6}], max err {err:.1e}", edge[0], edge[1], inner[0], inner[1]),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let net = NetworkConfig {
        level_sizes: vec![8, 4, 2],
        group_k: vec![3, 2],
        widths: vec![4, 5, 6],
        ..Default::default()
    };
    let (net, loss) = ablation_variant(5, &net, &LossConfig::default()).unwrap();
    let model = Model::new(net.clone(), 3).unwrap();
    let cloud = generate(&SceneSpec::indoor_with(17, 8, 0.005, true)).unwrap();
    let scene = PreparedScene::new(cloud, &model).unwrap();
    let levels = net.level_sizes.len();

    // zero offsets on every guidance logit the forward pass consumes
    let probe = {
        let mut tape = Tape::new();
        let p = model.params.bind_constant(&mut tape);
        let x = tape.constant(scene.input.clone());
        let enc = model.encode(&mut tape, &p, x, &scene.pyramid).unwrap();
        let logits = model.decode_guidance(&mut tape, &p, &enc, &scene.pyramid).unwrap();
        let shape = |v: Option<Var>| v.map(|v| tape.value(v).shape());
        (0..levels).map(|m| (shape(logits.boundary[m]), shape(logits.direction[m]))).collect::<Vec<_>>()
    };
    let mut inputs: Vec<Tensor> = model.params.tensors().to_vec();
    let n_params = inputs.len();
    let mut slots = Vec::new();
    for (m, (b, d)) in probe.iter().enumerate() {
        for (which, shape) in [(0, b), (1, d)] {
            if let Some([r, c]) = shape {
                slots.push((m, which));
                inputs.push(Tensor::zeros(*r, *c));
            }
        }
    }
    let guidance_coords: usize = inputs[n_params..].iter().map(Tensor::len).sum();

    let f = |tape: &mut Tape, v: &[Var]| -> pushbound::Result<Var> {
        let p = &v[..n_params];
        let x = tape.constant(scene.input.clone());
        let enc = model.encode(tape, p, x, &scene.pyramid)?;
        let mut logits = model.decode_guidance(tape, p, &enc, &scene.pyramid)?;
        for (i, &(m, which)) in slots.iter().enumerate() {
            let slot = if which == 0 { &mut logits.boundary[m] } else { &mut logits.direction[m] };
            let base = slot.expect("probed slot");
            *slot = Some(tape.add(base, v[n_params + i])?);
        }
        let guidance = model.stage_guidance(tape, &logits)?;
        let seg = model.decode_segmentation(tape, p, &enc, &scene.pyramid, &guidance)?;
        let probs = tape.softmax(seg)?;
        let l_s = losses::segmentation_loss(tape, probs, &scene.cloud.labels, loss.reduction)?;
        let bp = tape.softmax(logits.boundary[0].expect("boundary head"))?;
        let bp = tape.column(bp, 1)?;
        let l_b = losses::boundary_loss(tape, bp, scene.boundary.as_ref().expect("map"), &loss)?;
        let du = pushbound::propagation::normalize_rows(tape, logits.direction[0].expect("direction head"));
        let l_d = losses::direction_loss(tape, du, scene.directions.as_ref().expect("map"), loss.reduction)?;
        losses::total_loss(tape, l_s, Some(l_b), Some(l_d), &loss)
    };
    let cfg = GradCheckConfig {
        max_coords: Some(400),
        seed: 5,
        ..Default::default()
    };
    let report = check_gradients(&inputs, f, &cfg).unwrap();
    let on_guidance = report.checks.iter().filter(|c| c.input >= n_params).count();
    let worst = report.max_rel_error();
    let t = start.elapsed();
    outcome(
        report.checks.len() >= 100 && on_guidance > 0 && worst <= 1e-4 && within(t, 60.0),
        format!(
            "{} coords ({} on {} guidance logits, {} kinks skipped), max rel err {worst:.1e}, {:.2}s",
            report.checks.len(),
            on_guidance,
            guidance_coords,
            report.skipped_kinks,
            t.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let base = NetworkConfig::default();
    let loss = LossConfig::default();
    let (n4, _) = ablation_variant(4, &base, &loss).unwrap();
    let (mut n5, _) = ablation_variant(5, &base, &loss).unwrap();
    n5.propagation.alpha = 0.0;
    let m4 = Model::new(n4, 9).unwrap();
    let m5 = Model::new(n5, 9).unwrap();
    let same_init = m4.params == m5.params;
    let cloud = generate(&SceneSpec::indoor_with(4, 1024, 0.005, true)).unwrap();
    let pyr = m4.config().build_pyramid(&cloud).unwrap();
    let mut tape = Tape::new();
    let a = m4.forward(&mut tape, &cloud, &pyr).unwrap();
    let b = m5.forward(&mut tape, &cloud, &pyr).unwrap();
    let diff = tape
        .value(a.seg_logits)
        .data()
        .iter()
        .zip(tape.value(b.seg_logits).data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    outcome(
        same_init && diff <= 1e-12,
        format!("shared init {same_init}, max |logit diff| {diff:.1e} over 1024 points"),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut cfg = TrainConfig::default();
    cfg.data.train_scenes = 1;
    let (net, _) = cfg.resolved().unwrap();
    let scenes = prepare_specs(&cfg.data.train_specs(), &Model::new(net, cfg.seed).unwrap()).unwrap();
    let out = train(&cfg, &scenes).unwrap();
    let oa = evaluate_default(&out.model, &scenes).unwrap().global.oa;
    let t = start.elapsed();
    outcome(
        oa >= 0.99 && within(t, 300.0),
        format!(
            "variant 5, {} points, {} epochs: training OA {oa:.4}, {:.1}s",
            scenes[0].cloud.len(),
            cfg.epochs,
            t.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = ablation_config();
    let test_scenes = cfg.data.test_scenes;
    let mut spec = AblationSpec::new(cfg, vec![0, 1, 2, 3, 4]);
    spec.variants = vec![4, 5];
    let result = run_ablation(&spec).unwrap();
    let (sfp, gfp) = (result.mean_boundary_miou(4), result.mean_boundary_miou(5));
    let deltas = result.gfp_minus_sfp();
    let signs: Vec<String> = deltas.iter().map(|(s, d)| format!("{s}:{d:+.4}")).collect();
    let t = start.elapsed();
    let (Some(sfp), Some(gfp)) = (sfp, gfp) else {
        return outcome(false, "boundary region empty".into());
    };
    outcome(
        deltas.len() >= 5 && test_scenes >= 8 && gfp >= sfp && within(t, 7200.0),
        format!(
            "boundary mIoU SFP {sfp:.4}, GFP {gfp:.4}, delta {:+.4}, per seed [{}], {test_scenes} test scenes, {:.0}s",
            gfp - sfp,
            signs.join(" "),
            t.as_secs_f64()
        ),
    )
}

fn criterion_7() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let cfg = LossConfig::default();
    let mut tape = Tape::new();
    let mut errs = Vec::new();
    let half = tape.constant(Tensor::scalar(0.5));
    for (flag, want) in [(true, 0.6 * ln2), (false, 0.4 * ln2)] {
        let l = losses::boundary_loss(&mut tape, half, &groundtruth::BoundaryMap { flags: vec![flag] }, &cfg).unwrap();
        errs.push((tape.value(l).item().unwrap() - want).abs());
    }
    let two = tape.constant(Tensor::filled(1, 2, 0.5));
    let l = losses::segmentation_loss(&mut tape, two, &[0], Reduction::Mean).unwrap();
    errs.push((tape.value(l).item().unwrap() - ln2).abs());
    let thirteen = tape.constant(Tensor::filled(1, 13, 1.0 / 13.0));
    let l = losses::segmentation_loss(&mut tape, thirteen, &[12], Reduction::Mean).unwrap();
    errs.push((tape.value(l).item().unwrap() - 13f64.ln()).abs());
    let x = Point3::new(1.0, 0.0, 0.0);
    for (gt, want) in [(x, 0.0), (Point3::new(0.0, 1.0, 0.0), 2.0), (x * -1.0, 4.0)] {
        let pred = tape.constant(Tensor::new(1, 3, x.to_array().to_vec()).unwrap());
        let map = groundtruth::DirectionMap::from_vectors(vec![gt]);
        let l = losses::direction_loss(&mut tape, pred, &map, Reduction::Mean).unwrap();
        errs.push((tape.value(l).item().unwrap() - want).abs());
    }
    errs.push((LossReport::combine(1.0, 0.5, 2.0, &cfg).total - 3.1).abs());
    let (s, b, d) = (
        tape.constant(Tensor::scalar(1.0)),
        tape.constant(Tensor::scalar(0.5)),
        tape.constant(Tensor::scalar(2.0)),
    );
    let total = losses::total_loss(&mut tape, s, Some(b), Some(d), &cfg).unwrap();
    errs.push((tape.value(total).item().unwrap() - 3.1).abs());
    let worst = errs.iter().copied().fold(0.0, f64::max);
    outcome(worst <= 1e-9, format!("{} unit values, max err {worst:.1e}", errs.len()))
}

fn tiny_run_csv() -> (String, Checkpoint, PreparedScene, Model) {
    let mut cfg = TrainConfig::default();
    cfg.epochs = 3;
    cfg.data.points = 256;
    cfg.data.train_scenes = 2;
    cfg.data.test_scenes = 2;
    let (net, _) = cfg.resolved().unwrap();
    let probe = Model::new(net, cfg.seed).unwrap();
    let train_scenes = prepare_specs(&cfg.data.train_specs(), &probe).unwrap();
    let mut test_scenes = prepare_specs(&cfg.data.test_specs(), &probe).unwrap();
    let out = train(&cfg, &train_scenes).unwrap();
    let report = evaluate_default(&out.model, &test_scenes).unwrap();
    let names: Vec<String> = pushbound::synthgen::INDOOR_CLASSES.iter().map(|s| s.to_string()).collect();
    let csv = format!(
        "{}\n{}\n",
        csv_header(&names, true),
        csv_row("5", cfg.seed, &report.global, report.boundary.as_ref().map(|b| b.as_ref()))
    );
    (csv, out.checkpoint, test_scenes.remove(0), out.model)
}

fn criterion_8() -> Outcome {
    let (csv_a, ckpt, scene, model) = tiny_run_csv();
    let (csv_b, ..) = tiny_run_csv();
    let csv_same = csv_a == csv_b;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let (_, rebuilt) = model_from_checkpoint(&loaded).unwrap();
    let mut tape = Tape::new();
    let a = model.forward(&mut tape, &scene.cloud, &scene.pyramid).unwrap();
    let b = rebuilt.forward(&mut tape, &scene.cloud, &scene.pyramid).unwrap();
    let ckpt_same = loaded == ckpt && tape.value(a.seg_logits).data() == tape.value(b.seg_logits).data();

    let cloud = generate(&SceneSpec::indoor_with(8, 500, 0.005, true)).unwrap();
    let (bmap, dmap) = derive_maps(&cloud).unwrap();
    let mut ply = PlyCloud::new(cloud);
    ply.class_names = pushbound::synthgen::INDOOR_CLASSES.iter().map(|s| s.to_string()).collect();
    ply.boundary = Some(bmap);
    ply.directions = Some(dmap);
    ply.predictions = Some((0..500).map(|i| i % 6).collect());
    let text = to_ply_string(&ply, ColorMode::Original).unwrap();
    let back = parse_ply(&text).unwrap();
    // directions are f64 unit vectors stored at f32 print precision
    let dirs_close = match (&back.directions, &ply.directions) {
        (Some(a), Some(b)) => {
            a.valid == b.valid && a.vectors.iter().zip(&b.vectors).all(|(u, v)| (*u - *v).norm() <= 1e-6)
        }
        _ => false,
    };
    let ply_same = back.cloud == ply.cloud
        && back.class_names == ply.class_names
        && back.boundary == ply.boundary
        && back.predictions == ply.predictions
        && dirs_close
        && to_ply_string(&back, ColorMode::Original).unwrap() == text;

    outcome(
        csv_same && ckpt_same && ply_same,
        format!("metrics CSV bitwise {csv_same}, checkpoint round trip {ckpt_same}, PLY round trip {ply_same}"),
    )
}

fn criterion_9() -> Outcome {
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&[0, 0, 1], &[0, 1, 1]).unwrap();
    let m = cm.scores().unwrap();
    let matrix = [[cm.get(0, 0), cm.get(0, 1)], [cm.get(1, 0), cm.get(1, 1)]];
    outcome(
        matrix == [[1, 1], [0, 1]] && m.oa == 2.0 / 3.0 && m.miou == 0.5,
        format!("matrix {matrix:?}, OA {}, mIoU {}", m.oa, m.miou),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("ground-truth oracle equivalence", criterion_1),
        ("guided weight hand cases", criterion_2),
        ("end-to-end gradient check", criterion_3),
        ("guided with alpha=0 equals standard", criterion_4),
        ("overfit one scene", criterion_5),
        ("ablation direction (guided >= standard)", criterion_6),
        ("loss unit values", criterion_7),
        ("determinism and round trips", criterion_8),
        ("confusion hand case", criterion_9),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        let line = format!("{} criterion {} ({name}): {}\n", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        // written to the raw stream so the line shows without --nocapture
        let _ = std::io::stderr().write_all(line.as_bytes());
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
