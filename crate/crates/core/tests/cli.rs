use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pushbound::io::{read_ply, write_ply, ColorMode, PlyCloud};
use pushbound::network::checkpoint::{Checkpoint, RngState};
use pushbound::network::Model;
use pushbound::pipeline::TrainConfig;
use pushbound::synthgen::{generate, SceneSpec};
use rand::SeedableRng;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pushbound")).args(args).output().expect("spawn pushbound")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "epochs = 2\npoints = 128\ntrain_scenes = 1\ntest_scenes = 1\nwidths = 8,8,8\n";

#[test]
fn synth_writes_scenes_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let o = run(&["synth", "--scenes", "2", "--points", "300", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["manifest.txt", "scene_000.ply", "scene_001.ply"]);
    let ply = read_ply(&out.join("scene_001.ply")).unwrap();
    assert_eq!(ply.cloud.len(), 300);
    assert_eq!(ply.class_names.len(), 6);

    let again = dir.path().join("b");
    assert!(run(&["synth", "--scenes", "2", "--points", "300", "--out", path(&again)]).status.success());
    for f in ["scene_000.ply", "scene_001.ply"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap());
    }
}

#[test]
fn synth_merges_classes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--points", "400", "--classes", "3", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ply = read_ply(&dir.path().join("scene_000.ply")).unwrap();
    assert_eq!(ply.cloud.num_classes, 3);
    assert_eq!(ply.class_names, ["floor", "ceiling", "other"]);
    assert!(ply.cloud.labels.iter().all(|&l| l < 3));
}

#[test]
fn usage_errors_exit_with_two_and_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--points", "0", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let missing = dir.path().join("nope.cfg");
    let o = run(&["train", "--config", path(&missing), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).trim_end().lines().count(), 1, "{}", stderr(&o));
    let o = run(&["train", "--epochs", "0", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochs"));
    assert!(!dir.path().join("checkpoint.bin").exists());
}

#[test]
fn data_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ply");
    fs::write(&bad, "ply\nformat binary_little_endian 1.0\nend_header\n").unwrap();
    let o = run(&["labels", "--in", path(&bad), "--out", path(&dir.path().join("o.ply"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("ASCII only"));
    assert!(!dir.path().join("o.ply").exists());
}

#[test]
fn help_documents_flags_and_defaults() {
    for (sub, flags) in [
        ("synth", &["--seed", "--scenes", "--points", "--classes", "--noise", "--out", "[default: 4096]"][..]),
        ("labels", &["--in", "--k", "--out", "--brute-force", "[default: 4]"]),
        ("train", &["--config", "--variant", "--seed", "--epochs", "--out"]),
        ("eval", &["--checkpoint", "--scenes", "--rho", "--out", "[default: 0.1]"]),
        ("ablate", &["--config", "--seeds", "--out", "[default: 0,1,2,3,4]"]),
    ] {
        let o = run(&[sub, "--help"]);
        assert!(o.status.success());
        let text = String::from_utf8_lossy(&o.stdout);
        for f in flags {
            assert!(text.contains(f), "{sub} --help lacks {f}:\n{text}");
        }
    }
}

fn synth_one(dir: &Path, points: &str) -> PathBuf {
    assert!(run(&["synth", "--points", points, "--seed", "3", "--out", path(dir)]).status.success());
    dir.join("scene_000.ply")
}

#[test]
fn labels_fast_path_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_one(dir.path(), "400");
    let fast = dir.path().join("fast.ply");
    let slow = dir.path().join("slow.ply");
    assert!(run(&["labels", "--in", path(&scene), "--out", path(&fast)]).status.success());
    assert!(run(&["labels", "--in", path(&scene), "--out", path(&slow), "--brute-force"]).status.success());
    assert_eq!(fs::read(&fast).unwrap(), fs::read(&slow).unwrap());
    let ply = read_ply(&fast).unwrap();
    assert!(ply.boundary.unwrap().count() > 0);
    assert!(ply.directions.is_some());
    assert!(dir.path().join("fast.ply.manifest.txt").exists());
}

#[test]
fn labels_on_uniform_cloud_flags_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cloud = generate(&SceneSpec::indoor_with(2, 200, 0.005, true)).unwrap();
    cloud.labels.iter_mut().for_each(|l| *l = 0);
    let input = dir.path().join("u.ply");
    write_ply(&input, &PlyCloud::new(cloud), ColorMode::Original).unwrap();
    let out = dir.path().join("l.ply");
    assert!(run(&["labels", "--in", path(&input), "--out", path(&out), "--color", "boundary"]).status.success());
    let ply = read_ply(&out).unwrap();
    assert_eq!(ply.boundary.unwrap().count(), 0);
    assert_eq!(ply.directions.unwrap().valid_count(), 0);
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let run_dir = dir.path().join("run");
    let o = run(&["train", "--config", path(&cfg), "--variant", "1", "--seed", "4", "--out", path(&run_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let loss = fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("epoch,lr,l_s,l_b,l_d,total"));
    assert_eq!(loss.lines().count(), 3);
    let manifest = fs::read_to_string(run_dir.join("manifest.txt")).unwrap();
    for line in ["manifest.effective.lambda1 = 0", "manifest.effective.lambda2 = 0", "variant = 1", "seed = 4", "points = 128"] {
        assert!(manifest.lines().any(|l| l == line), "manifest lacks `{line}`:\n{manifest}");
    }

    // rerunning from the manifest reproduces the checkpoint and the log
    let again = dir.path().join("again");
    let o = run(&["train", "--config", path(&run_dir.join("manifest.txt")), "--out", path(&again)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["checkpoint.bin", "loss.csv"] {
        assert_eq!(fs::read(run_dir.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    let scenes = dir.path().join("scenes");
    assert!(run(&["synth", "--points", "128", "--seed", "50", "--scenes", "2", "--out", path(&scenes)]).status.success());
    let eval = dir.path().join("eval");
    let ckpt = run_dir.join("checkpoint.bin");
    let o = run(&["eval", "--checkpoint", path(&ckpt), "--scenes", path(&scenes), "--out", path(&eval)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    let header = "variant,seed,oa,miou,iou_floor,iou_ceiling,iou_wall,iou_board,iou_column,iou_clutter";
    assert_eq!(csv.lines().next(), Some(header));
    assert!(csv.lines().nth(1).unwrap().starts_with("1,4,"));
    let pred = read_ply(&eval.join("scene_000_pred.ply")).unwrap();
    assert_eq!(pred.predictions.unwrap().len(), 128);

    // with ground-truth maps the boundary column appears
    let labeled = dir.path().join("labeled");
    fs::create_dir(&labeled).unwrap();
    for f in ["scene_000.ply", "scene_001.ply"] {
        let o = run(&["labels", "--in", path(&scenes.join(f)), "--out", path(&labeled.join(f))]);
        assert!(o.status.success());
    }
    let eval2 = dir.path().join("eval2");
    let o = run(&["eval", "--checkpoint", path(&ckpt), "--scenes", path(&labeled), "--out", path(&eval2)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(eval2.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("variant,seed,oa,miou,boundary_miou,iou_floor"));
}

#[test]
fn eval_of_perfect_predictor_has_unit_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: TrainConfig = pushbound::config::parse(SMALL, TrainConfig::default()).unwrap();
    cfg.variant = 1;
    let (net, _) = cfg.resolved().unwrap();
    let mut model = Model::new(net, 0).unwrap();
    // zero head weights and a large bias on class 2: every point says wall
    let names = model.params.names().to_vec();
    let tensors = model.params.tensors_mut();
    let w = names.iter().position(|n| n == "seg.head.w").unwrap();
    let b = names.iter().position(|n| n == "seg.head.b").unwrap();
    tensors[w].data_mut().iter_mut().for_each(|v| *v = 0.0);
    tensors[b].data_mut()[2] = 50.0;
    let ckpt = Checkpoint {
        config: cfg.to_text(),
        epoch: 0,
        rng: RngState::capture(&rand_chacha::ChaCha8Rng::seed_from_u64(0)),
        params: model.params.clone(),
    };
    let ckpt_path = dir.path().join("perfect.bin");
    ckpt.save(&ckpt_path).unwrap();

    let mut cloud = generate(&SceneSpec::indoor_with(6, 128, 0.005, true)).unwrap();
    cloud.labels.iter_mut().for_each(|l| *l = 2);
    let scene = dir.path().join("walls.ply");
    write_ply(&scene, &PlyCloud::new(cloud), ColorMode::Original).unwrap();
    let out = dir.path().join("eval");
    let o = run(&["eval", "--checkpoint", path(&ckpt_path), "--scenes", path(&scene), "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[2], "1.000000");
    assert_eq!(row[3], "1.000000");
    assert_eq!(row[6], "1.000000");
    assert_eq!(row[4], "NA");
}

#[test]
fn ablate_writes_table_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, format!("{SMALL}epochs = 1\npoints = 96\n")).unwrap();
    let out = dir.path().join("abl");
    let o = run(&["ablate", "--config", path(&cfg), "--seeds", "0,1", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert!(csv.starts_with("variant,seed,oa,miou,boundary_miou,"));
    assert_eq!(csv.lines().count(), 1 + 5 * 2);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next(), Some("variant,mean_oa,mean_miou,mean_boundary_miou,gfp_minus_sfp"));
    assert_eq!(summary.lines().count(), 6);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("GFP - SFP boundary mIoU"));
    assert!(text.contains("not asserted"));
    assert!(out.join("manifest.txt").exists());
}
