//! Flat `key = value` configuration text.
//!
//! Blank lines and `#` comments are ignored. Keys under `manifest.` are run
//! metadata and skipped, so a run manifest can be fed back as a config.
//! Every key of [`TrainConfig`] is listed by [`to_text`] with its current
//! value.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::losses::Reduction;
use crate::network::GuidancePlacement;
use crate::pipeline::TrainConfig;
use crate::propagation::PropagationMode;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
}

fn list(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// All keys of `cfg` with their values, one per line, in a fixed order.
pub fn to_text(cfg: &TrainConfig) -> String {
    let n = &cfg.network;
    let p = &n.propagation;
    let d = &cfg.data;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("variant", cfg.variant.to_string());
    kv("epochs", cfg.epochs.to_string());
    kv("lr", cfg.lr.to_string());
    kv("momentum", cfg.momentum.to_string());
    kv("lr_decay", cfg.lr_decay.to_string());
    kv("seed", cfg.seed.to_string());
    kv("scenes_per_epoch", cfg.scenes_per_epoch.to_string());
    kv("beta", cfg.loss.beta.to_string());
    kv("lambda1", cfg.loss.lambda1.to_string());
    kv("lambda2", cfg.loss.lambda2.to_string());
    kv(
        "reduction",
        match cfg.loss.reduction {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
        }
        .into(),
    );
    kv("level_sizes", list(&n.level_sizes));
    kv("group_k", list(&n.group_k));
    kv("widths", list(&n.widths));
    kv("num_classes", n.num_classes.to_string());
    kv("feature_dim", n.feature_dim.to_string());
    kv("alpha", p.alpha.to_string());
    kv("radius", p.radius.to_string());
    kv("prop_k", p.k.to_string());
    kv(
        "propagation",
        match p.mode {
            PropagationMode::Guided => "guided",
            PropagationMode::Standard => "standard",
        }
        .into(),
    );
    kv("detach_guidance", p.detach_guidance.to_string());
    kv(
        "placement",
        match n.placement {
            GuidancePlacement::AllStages => "all",
            GuidancePlacement::FinalStageOnly => "final",
        }
        .into(),
    );
    kv("fps_seed", n.fps_seed.to_string());
    kv("train_scenes", d.train_scenes.to_string());
    kv("test_scenes", d.test_scenes.to_string());
    kv("points", d.points.to_string());
    kv("noise", d.noise.to_string());
    kv("normals", d.normals.to_string());
    kv("scene_seed", d.scene_seed.to_string());
    s
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::Invalid {
        key: key.to_string(),
        message: format!("cannot parse `{v}`"),
    })
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>, ConfigError> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_value(key, x.trim())).collect()
}

/// Applies one key to `cfg`.
pub fn set(cfg: &mut TrainConfig, key: &str, v: &str) -> Result<bool, ConfigError> {
    let n = &mut cfg.network;
    let choice = |options: &[&str]| -> Result<usize, ConfigError> {
        options.iter().position(|o| *o == v).ok_or_else(|| ConfigError::Invalid {
            key: key.to_string(),
            message: format!("expected one of {options:?}, got `{v}`"),
        })
    };
    match key {
        "variant" => cfg.variant = parse_value(key, v)?,
        "epochs" => cfg.epochs = parse_value(key, v)?,
        "lr" => cfg.lr = parse_value(key, v)?,
        "momentum" => cfg.momentum = parse_value(key, v)?,
        "lr_decay" => cfg.lr_decay = parse_value(key, v)?,
        "seed" => cfg.seed = parse_value(key, v)?,
        "scenes_per_epoch" => cfg.scenes_per_epoch = parse_value(key, v)?,
        "beta" => cfg.loss.beta = parse_value(key, v)?,
        "lambda1" => cfg.loss.lambda1 = parse_value(key, v)?,
        "lambda2" => cfg.loss.lambda2 = parse_value(key, v)?,
        "reduction" => cfg.loss.reduction = [Reduction::Mean, Reduction::Sum][choice(&["mean", "sum"])?],
        "level_sizes" => n.level_sizes = parse_list(key, v)?,
        "group_k" => n.group_k = parse_list(key, v)?,
        "widths" => n.widths = parse_list(key, v)?,
        "num_classes" => n.num_classes = parse_value(key, v)?,
        "feature_dim" => n.feature_dim = parse_value(key, v)?,
        "alpha" => n.propagation.alpha = parse_value(key, v)?,
        "radius" => n.propagation.radius = parse_value(key, v)?,
        "prop_k" => n.propagation.k = parse_value(key, v)?,
        "propagation" => {
            n.propagation.mode = [PropagationMode::Guided, PropagationMode::Standard][choice(&["guided", "standard"])?]
        }
        "detach_guidance" => n.propagation.detach_guidance = parse_value(key, v)?,
        "placement" => {
            n.placement = [GuidancePlacement::AllStages, GuidancePlacement::FinalStageOnly][choice(&["all", "final"])?]
        }
        "fps_seed" => n.fps_seed = parse_value(key, v)?,
        "train_scenes" => cfg.data.train_scenes = parse_value(key, v)?,
        "test_scenes" => cfg.data.test_scenes = parse_value(key, v)?,
        "points" => cfg.data.points = parse_value(key, v)?,
        "noise" => cfg.data.noise = parse_value(key, v)?,
        "normals" => cfg.data.normals = parse_value(key, v)?,
        "scene_seed" => cfg.data.scene_seed = parse_value(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses `text` on top of `base`.
pub fn parse(text: &str, base: TrainConfig) -> Result<TrainConfig, ConfigError> {
    let mut cfg = base;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.starts_with("manifest.") {
            continue;
        }
        if !set(&mut cfg, key, value)? {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
    }
    Ok(cfg)
}

pub fn load(path: &Path, base: TrainConfig) -> Result<TrainConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse(&text, base)
}
