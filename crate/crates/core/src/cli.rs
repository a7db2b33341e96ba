//! The `pushbound` command line.
//!
//! Every subcommand writes its outputs atomically and a `manifest.txt` next
//! to them. A manifest is a valid config file: `manifest.*` keys are skipped
//! when it is passed back through `--config`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config;
use crate::groundtruth::{self, brute_force, DEFAULT_BOUNDARY_K};
use crate::io::{read_ply, write_atomic, write_ply, ColorMode, PlyCloud};
use crate::metrics::{csv_header, csv_row, DEFAULT_RHO};
use crate::network::checkpoint::Checkpoint;
use crate::network::Model;
use crate::pipeline::{
    ablation_config, evaluate, loss_csv, model_from_checkpoint, prepare_specs, run_ablation, train, AblationSpec, PreparedScene,
    TrainConfig,
};
use crate::synthgen::{generate, SceneSpec, DEFAULT_NOISE, DEFAULT_POINTS, INDOOR_CLASSES};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "pushbound", version, about = "Boundary-aware point cloud segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic labeled indoor scenes as PLY files.
    Synth(SynthArgs),
    /// Derive ground-truth boundary and direction maps for a PLY cloud.
    Labels(LabelsArgs),
    /// Train one network variant on synthetic scenes.
    Train(TrainArgs),
    /// Evaluate a checkpoint on PLY scenes.
    Eval(EvalArgs),
    /// Train and evaluate all variants over several seeds.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Seed of the first scene; scene i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of scenes.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub scenes: u64,
    /// Points per scene.
    #[arg(long, default_value_t = DEFAULT_POINTS as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub points: u64,
    /// Number of classes (2..=6); the last class absorbs the remaining ones.
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u64).range(2..=6))]
    pub classes: u64,
    /// Standard deviation of the position noise in meters.
    #[arg(long, default_value_t = DEFAULT_NOISE)]
    pub noise: f64,
    /// Omit per-point normals.
    #[arg(long)]
    pub no_normals: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ColorArg {
    Original,
    Boundary,
    Direction,
}

impl From<ColorArg> for ColorMode {
    fn from(c: ColorArg) -> Self {
        match c {
            ColorArg::Original => ColorMode::Original,
            ColorArg::Boundary => ColorMode::BoundaryRed,
            ColorArg::Direction => ColorMode::DirectionZ,
        }
    }
}

#[derive(Debug, Args)]
pub struct LabelsArgs {
    /// Input PLY cloud with labels.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Neighborhood size of the boundary test.
    #[arg(long, default_value_t = DEFAULT_BOUNDARY_K)]
    pub k: usize,
    /// Output PLY path.
    #[arg(long)]
    pub out: PathBuf,
    /// Use the quadratic reference derivation instead of the kd-tree path.
    #[arg(long)]
    pub brute_force: bool,
    /// Vertex colors of the output.
    #[arg(long, value_enum, default_value_t = ColorArg::Original)]
    pub color: ColorArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ablation variant: 1 baseline, 2 +boundary, 3 +direction, 4 both, 5 guided.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    pub variant: Option<u8>,
    /// Initialization and shuffling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output directory for the checkpoint, loss CSV and manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PLY files, or directories whose `.ply` files are all used.
    #[arg(long, num_args = 1.., required = true)]
    pub scenes: Vec<PathBuf>,
    /// Radius of the boundary region in meters.
    #[arg(long, default_value_t = DEFAULT_RHO)]
    pub rho: f64,
    /// Output directory for the metrics CSV, predicted PLYs and manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Config file of `key = value` lines, applied over the ablation
    /// defaults (60 epochs, 4 training and 8 test scenes).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Provenance written beside every output.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub seed: u64,
    pub args: Vec<(String, String)>,
    pub config: Option<TrainConfig>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            seed,
            args: Vec::new(),
            config: None,
        }
    }

    pub fn arg(mut self, key: &str, value: impl ToString) -> Self {
        self.args.push((key.into(), value.to_string()));
        self
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "manifest.command = {}", self.command);
        let _ = writeln!(s, "manifest.version = {}", self.version);
        let _ = writeln!(s, "manifest.timestamp = {}", self.timestamp);
        let _ = writeln!(s, "manifest.seed = {}", self.seed);
        for (k, v) in &self.args {
            let _ = writeln!(s, "manifest.arg.{k} = {v}");
        }
        if let Some(cfg) = &self.config {
            // values after the variant is applied, for reference only
            if let Ok((net, loss)) = cfg.resolved() {
                let _ = writeln!(s, "manifest.effective.lambda1 = {}", loss.lambda1);
                let _ = writeln!(s, "manifest.effective.lambda2 = {}", loss.lambda2);
                let _ = writeln!(s, "manifest.effective.boundary_stream = {}", net.streams.boundary);
                let _ = writeln!(s, "manifest.effective.direction_stream = {}", net.streams.direction);
                let _ = writeln!(s, "manifest.effective.alpha = {}", net.propagation.effective_alpha());
            }
            s.push_str(&cfg.to_text());
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

fn load_config(path: Option<&Path>, base: TrainConfig) -> Result<TrainConfig> {
    Ok(match path {
        Some(p) => config::load(p, base)?,
        None => base,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(config::ConfigError::Invalid {
            key: "noise".into(),
            message: format!("must be finite and nonnegative, got {}", a.noise),
        }
        .into());
    }
    create_dir(&a.out)?;
    for i in 0..a.scenes {
        let spec = SceneSpec::indoor_with(a.seed + i, a.points as usize, a.noise, !a.no_normals)
            .with_classes(a.classes as usize)?;
        let mut ply = PlyCloud::new(generate(&spec)?);
        ply.class_names = spec.class_names();
        write_ply(&a.out.join(format!("scene_{i:03}.ply")), &ply, ColorMode::Original)?;
    }
    RunManifest::new("synth", a.seed)
        .arg("scenes", a.scenes)
        .arg("points", a.points)
        .arg("classes", a.classes)
        .arg("noise", a.noise)
        .arg("normals", !a.no_normals)
        .write(&a.out.join("manifest.txt"))
}

fn labels(a: &LabelsArgs) -> Result<()> {
    let mut ply = read_ply(&a.input)?;
    let (b, d) = if a.brute_force {
        let b = brute_force::derive_boundary_map(&ply.cloud, a.k)?;
        let d = brute_force::derive_direction_map(&ply.cloud, &b)?;
        (b, d)
    } else {
        let b = groundtruth::derive_boundary_map(&ply.cloud, a.k)?;
        let d = groundtruth::derive_direction_map(&ply.cloud, &b)?;
        (b, d)
    };
    log::info!("{} boundary points, {} valid directions", b.count(), d.valid_count());
    ply.boundary = Some(b);
    ply.directions = Some(d);
    write_ply(&a.out, &ply, a.color.into())?;
    let mut manifest_path = a.out.clone().into_os_string();
    manifest_path.push(".manifest.txt");
    RunManifest::new("labels", 0)
        .arg("in", a.input.display())
        .arg("k", a.k)
        .arg("brute_force", a.brute_force)
        .write(Path::new(&manifest_path))
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), TrainConfig::default())?;
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    create_dir(&a.out)?;
    let (net, _) = cfg.resolved()?;
    let probe = Model::new(net, cfg.seed)?;
    let scenes = prepare_specs(&cfg.data.train_specs(), &probe)?;
    let out = train(&cfg, &scenes)?;
    out.checkpoint.save(&a.out.join("checkpoint.bin"))?;
    write_atomic(&a.out.join("loss.csv"), loss_csv(&out.log).as_bytes())?;
    let mut manifest = RunManifest::new("train", cfg.seed);
    manifest.config = Some(cfg);
    manifest.write(&a.out.join("manifest.txt"))
}

fn scene_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .filter(|f| f.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Scene("no PLY scenes found".into()));
    }
    Ok(files)
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    if !(a.rho > 0.0 && a.rho.is_finite()) {
        return Err(config::ConfigError::Invalid {
            key: "rho".into(),
            message: format!("must be positive, got {}", a.rho),
        }
        .into());
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (cfg, model) = model_from_checkpoint(&ckpt)?;
    let files = scene_files(&a.scenes)?;
    let mut plys = Vec::with_capacity(files.len());
    let mut scenes = Vec::with_capacity(files.len());
    for f in &files {
        let ply = read_ply(f)?;
        scenes.push(PreparedScene::with_maps(
            ply.cloud.clone(),
            &model,
            ply.boundary.clone(),
            ply.directions.clone(),
        )?);
        plys.push(ply);
    }
    let report = evaluate(&model, &scenes, a.rho)?;
    let class_names: Vec<String> = match plys[0].class_names.len() {
        0 if model.config().num_classes == INDOOR_CLASSES.len() => {
            INDOOR_CLASSES.iter().map(|s| s.to_string()).collect()
        }
        0 => (0..model.config().num_classes).map(|c| format!("class{c}")).collect(),
        _ => plys[0].class_names.clone(),
    };
    create_dir(&a.out)?;
    let mut csv = csv_header(&class_names, report.boundary.is_some());
    csv.push('\n');
    csv.push_str(&csv_row(
        &cfg.variant.to_string(),
        cfg.seed,
        &report.global,
        report.boundary.as_ref().map(|b| b.as_ref()),
    ));
    csv.push('\n');
    write_atomic(&a.out.join("metrics.csv"), csv.as_bytes())?;
    for ((f, mut ply), pred) in files.iter().zip(plys).zip(report.predictions) {
        let stem = f.file_stem().map_or_else(|| "scene".into(), |s| s.to_string_lossy().into_owned());
        ply.predictions = Some(pred);
        write_ply(&a.out.join(format!("{stem}_pred.ply")), &ply, ColorMode::Original)?;
    }
    let mut manifest = RunManifest::new("eval", cfg.seed)
        .arg("checkpoint", a.checkpoint.display())
        .arg("rho", a.rho)
        .arg("scenes", files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>().join(","));
    manifest.config = Some(cfg);
    manifest.write(&a.out.join("manifest.txt"))
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), ablation_config())?;
    cfg.validate()?;
    create_dir(&a.out)?;
    let spec = AblationSpec::new(cfg.clone(), a.seeds.clone());
    let result = run_ablation(&spec)?;
    write_atomic(&a.out.join("ablation.csv"), result.csv().as_bytes())?;
    write_atomic(&a.out.join("summary.csv"), result.summary_csv().as_bytes())?;
    let text = result.summary_text();
    write_atomic(&a.out.join("summary.txt"), text.as_bytes())?;
    print!("{text}");
    let seeds = a.seeds.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
    let mut manifest = RunManifest::new("ablate", cfg.seed).arg("seeds", seeds);
    manifest.config = Some(cfg);
    manifest.write(&a.out.join("manifest.txt"))
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Labels(a) => labels(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate(a),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            e.exit_code()
        }
    }
}
