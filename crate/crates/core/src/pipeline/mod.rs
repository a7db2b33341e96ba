//! Training, evaluation and the ablation runner.
//!
//! Training is plain SGD with momentum on the total loss, one scene per
//! step, with an exponential learning-rate decay per epoch. A run is fully
//! determined by its [`TrainConfig`].

mod ablation;

pub use ablation::{run_ablation, AblationCell, AblationResult, AblationSpec, PAPER_REFERENCE};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::LevelPyramid;
use crate::groundtruth::{derive_maps, BoundaryMap, DirectionMap};
use crate::losses::{self, LossConfig, LossReport};
use crate::metrics::{boundary_region_mask, ConfusionMatrix, SceneMetrics, DEFAULT_RHO};
use crate::network::checkpoint::{Checkpoint, RngState};
use crate::network::{ablation_variant, argmax_rows, Model, NetworkConfig};
use crate::synthgen::{generate, LabeledCloud, SceneSpec};
use crate::tensor::{Tape, Tensor};
use crate::{config, Error, Result};

/// Synthetic data used by `train` and `ablate`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub points: usize,
    pub noise: f64,
    pub normals: bool,
    /// Scene `i` of a run uses seed `scene_seed + i`; test scenes follow the
    /// training scenes.
    pub scene_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_scenes: 4,
            test_scenes: 8,
            points: 4096,
            noise: crate::synthgen::DEFAULT_NOISE,
            normals: true,
            scene_seed: 1000,
        }
    }
}

impl DataConfig {
    pub fn train_specs(&self) -> Vec<SceneSpec> {
        (0..self.train_scenes as u64)
            .map(|i| SceneSpec::indoor_with(self.scene_seed + i, self.points, self.noise, self.normals))
            .collect()
    }

    pub fn test_specs(&self) -> Vec<SceneSpec> {
        let base = self.scene_seed + self.train_scenes as u64;
        (0..self.test_scenes as u64)
            .map(|i| SceneSpec::indoor_with(base + i, self.points, self.noise, self.normals))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
    /// Scenes visited per epoch; 0 means all.
    pub scenes_per_epoch: usize,
    pub loss: LossConfig,
    /// Base network; [`TrainConfig::resolved`] applies the variant.
    pub network: NetworkConfig,
    pub variant: u8,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.1,
            momentum: 0.9,
            lr_decay: 0.98,
            seed: 0,
            scenes_per_epoch: 0,
            loss: LossConfig::default(),
            network: NetworkConfig::default(),
            variant: 5,
            data: DataConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| -> Result<()> {
            Err(config::ConfigError::Invalid {
                key: key.into(),
                message,
            }
            .into())
        };
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be finite and nonnegative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", format!("must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay", format!("must lie in (0, 1], got {}", self.lr_decay));
        }
        self.loss.validate()?;
        self.resolved()?.0.validate()
    }

    /// Network and loss configuration after applying the variant.
    pub fn resolved(&self) -> Result<(NetworkConfig, LossConfig)> {
        ablation_variant(self.variant, &self.network, &self.loss)
    }

    pub fn to_text(&self) -> String {
        config::to_text(self)
    }
}

/// Configuration used by the ablation runner: [`TrainConfig::default`] with
/// fewer epochs.
pub fn ablation_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.epochs = 60;
    cfg.data.train_scenes = 4;
    cfg.data.test_scenes = 8;
    cfg
}

/// A cloud with everything training and evaluation need precomputed.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub cloud: LabeledCloud,
    pub pyramid: LevelPyramid,
    pub input: Tensor,
    pub boundary: Option<BoundaryMap>,
    pub directions: Option<DirectionMap>,
}

impl PreparedScene {
    /// Builds the pyramid and derives ground-truth maps.
    pub fn new(cloud: LabeledCloud, model: &Model) -> Result<Self> {
        let (b, d) = derive_maps(&cloud)?;
        Self::with_maps(cloud, model, Some(b), Some(d))
    }

    pub fn with_maps(
        cloud: LabeledCloud,
        model: &Model,
        boundary: Option<BoundaryMap>,
        directions: Option<DirectionMap>,
    ) -> Result<Self> {
        cloud.validate()?;
        if cloud.num_classes != model.config().num_classes {
            return Err(Error::Mismatch(format!(
                "scene has K={} classes, model K={}",
                cloud.num_classes,
                model.config().num_classes
            )));
        }
        let pyramid = model.config().build_pyramid(&cloud)?;
        let input = model.input_tensor(&cloud)?;
        Ok(Self {
            cloud,
            pyramid,
            input,
            boundary,
            directions,
        })
    }
}

/// Generates and prepares scenes from specs.
pub fn prepare_specs(specs: &[SceneSpec], model: &Model) -> Result<Vec<PreparedScene>> {
    specs.iter().map(|s| PreparedScene::new(generate(s)?, model)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the epoch's steps.
    pub loss: LossReport,
}

pub fn loss_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,l_s,l_b,l_d,total\n");
    for e in log {
        let l = &e.loss;
        s.push_str(&format!("{},{:e},{:.9},{:.9},{:.9},{:.9}\n", e.epoch, e.lr, l.l_s, l.l_b, l.l_d, l.total));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub checkpoint: Checkpoint,
}

/// Loss of `model` (with parameters bound on `tape`) on one scene.
pub fn scene_loss(
    tape: &mut Tape,
    model: &Model,
    params: &[crate::tensor::Var],
    scene: &PreparedScene,
    loss: &LossConfig,
) -> Result<(crate::tensor::Var, [Option<crate::tensor::Var>; 3])> {
    let input = tape.constant(scene.input.clone());
    let out = model.forward_with(tape, params, input, &scene.pyramid)?;
    let l_s = losses::segmentation_loss(tape, out.seg_probs, &scene.cloud.labels, loss.reduction)?;
    let need = |what: &str| Error::Mismatch(format!("scene lacks a ground-truth {what} map"));
    let l_b = match out.boundary_prob {
        Some(p) => Some(losses::boundary_loss(tape, p, scene.boundary.as_ref().ok_or_else(|| need("boundary"))?, loss)?),
        None => None,
    };
    let l_d = match out.direction_unit {
        Some(d) => Some(losses::direction_loss(
            tape,
            d,
            scene.directions.as_ref().ok_or_else(|| need("direction"))?,
            loss.reduction,
        )?),
        None => None,
    };
    let total = losses::total_loss(tape, l_s, l_b, l_d, loss)?;
    Ok((total, [Some(l_s), l_b, l_d]))
}

/// Momentum SGD state.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(params: &[Tensor], momentum: f64) -> Self {
        Self {
            momentum,
            velocity: params.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect(),
        }
    }

    /// `v ← μ·v + g`, `p ← p − lr·v`. Missing gradients count as zero.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>], lr: f64) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            let g = g.as_ref().map(Tensor::data);
            for (i, (pv, vv)) in p.data_mut().iter_mut().zip(v.data_mut()).enumerate() {
                *vv = self.momentum * *vv + g.map_or(0.0, |g| g[i]);
                *pv -= lr * *vv;
            }
        }
    }
}

/// Trains a fresh model initialized from `cfg.seed`.
pub fn train(cfg: &TrainConfig, scenes: &[PreparedScene]) -> Result<TrainOutcome> {
    let (net, _) = cfg.resolved()?;
    let model = Model::new(net, cfg.seed)?;
    train_model(cfg, model, scenes)
}

/// Trains `model` in place of a fresh initialization.
pub fn train_model(cfg: &TrainConfig, mut model: Model, scenes: &[PreparedScene]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Scene("no training scenes".into()));
    }
    let (_, loss_cfg) = cfg.resolved()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_0000);
    let mut sgd = Sgd::new(model.params.tensors(), cfg.momentum);
    let mut lr = cfg.lr;
    let mut log = Vec::with_capacity(cfg.epochs);
    let per_epoch = match cfg.scenes_per_epoch {
        0 => scenes.len(),
        n => n.min(scenes.len()),
    };
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        for (step, &si) in order[..per_epoch].iter().enumerate() {
            let mut tape = Tape::new();
            let params = model.params.bind(&mut tape);
            let (total, terms) = scene_loss(&mut tape, &model, &params, &scenes[si], &loss_cfg)?;
            let values: Vec<f64> = terms
                .iter()
                .map(|t| t.map_or(0.0, |v| tape.value(v).item().unwrap_or(f64::NAN)))
                .chain([tape.value(total).item().unwrap_or(f64::NAN)])
                .collect();
            for (name, v) in ["l_s", "l_b", "l_d", "total"].iter().zip(&values) {
                if !v.is_finite() {
                    return Err(Error::Divergence { epoch, step, term: name });
                }
            }
            for (s, v) in sums.iter_mut().zip(&values) {
                *s += v;
            }
            tape.backward(total)?;
            let grads: Vec<Option<Tensor>> = params.iter().map(|&p| tape.grad(p).cloned()).collect();
            if let Some(i) = grads.iter().position(|g| g.as_ref().is_some_and(|g| !g.is_finite())) {
                log::error!("non-finite gradient in {}", model.params.names()[i]);
                return Err(Error::Divergence { epoch, step, term: "gradient" });
            }
            sgd.step(model.params.tensors_mut(), &grads, lr);
        }
        let k = per_epoch as f64;
        let loss = LossReport {
            l_s: sums[0] / k,
            l_b: sums[1] / k,
            l_d: sums[2] / k,
            total: sums[3] / k,
        };
        log::debug!("epoch {epoch}: lr {lr:e} loss {:.6}", loss.total);
        log.push(EpochLog { epoch, lr, loss });
        lr *= cfg.lr_decay;
    }
    let checkpoint = Checkpoint {
        config: cfg.to_text(),
        epoch: cfg.epochs as u64,
        rng: RngState::capture(&rng),
        params: model.params.clone(),
    };
    Ok(TrainOutcome { model, log, checkpoint })
}

/// Rebuilds the trained model stored in a checkpoint.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<(TrainConfig, Model)> {
    let cfg = config::parse(&ckpt.config, TrainConfig::default())?;
    let (net, _) = cfg.resolved()?;
    let mut model = Model::new(net, cfg.seed)?;
    if model.params.names() != ckpt.params.names() {
        return Err(Error::Checkpoint("parameter names do not match the stored configuration".into()));
    }
    model.params.assign(ckpt.params.tensors().to_vec())?;
    Ok((cfg, model))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub global: SceneMetrics,
    /// `None` when some scene lacks a boundary map; `Some(None)` when the
    /// boundary region is empty.
    pub boundary: Option<Option<SceneMetrics>>,
    pub predictions: Vec<Vec<usize>>,
}

/// Argmax predictions and metrics accumulated over all scenes.
pub fn evaluate(model: &Model, scenes: &[PreparedScene], rho: f64) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(Error::Scene("no test scenes".into()));
    }
    let k = model.config().num_classes;
    let mut global = ConfusionMatrix::new(k);
    let mut region = ConfusionMatrix::new(k);
    let with_boundary = scenes.iter().all(|s| s.boundary.is_some());
    let mut predictions = Vec::with_capacity(scenes.len());
    for s in scenes {
        if s.cloud.num_classes != k {
            return Err(Error::Mismatch(format!("scene has K={}, model K={k}", s.cloud.num_classes)));
        }
        let mut tape = Tape::new();
        let p = model.params.bind_constant(&mut tape);
        let input = tape.constant(s.input.clone());
        let out = model.forward_with(&mut tape, &p, input, &s.pyramid)?;
        let pred = argmax_rows(tape.value(out.seg_logits));
        global.accumulate(&s.cloud.labels, &pred)?;
        if let (true, Some(b)) = (with_boundary, &s.boundary) {
            let mask = boundary_region_mask(&s.cloud.positions, b, rho);
            region.accumulate_masked(&s.cloud.labels, &pred, Some(&mask))?;
        }
        predictions.push(pred);
    }
    let boundary = with_boundary.then(|| (region.total() > 0).then(|| region.scores()).transpose()).transpose()?;
    Ok(EvalReport {
        global: global.scores()?,
        boundary,
        predictions,
    })
}

/// Evaluation with the default boundary radius.
pub fn evaluate_default(model: &Model, scenes: &[PreparedScene]) -> Result<EvalReport> {
    evaluate(model, scenes, DEFAULT_RHO)
}
