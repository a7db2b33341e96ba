use std::fmt::Write as _;

use rayon::prelude::*;

use super::{evaluate, prepare_specs, train, PreparedScene, TrainConfig};
use crate::metrics::{csv_header, csv_row, SceneMetrics, DEFAULT_RHO};
use crate::network::Model;
use crate::synthgen::INDOOR_CLASSES;
use crate::{Error, Result};

/// Published mIoU (%) of the five variants on the full-scale indoor
/// benchmark, printed for orientation only.
pub const PAPER_REFERENCE: [(u8, f64); 5] = [(1, 65.6), (2, 66.6), (3, 66.2), (4, 66.3), (5, 67.2)];

#[derive(Debug, Clone)]
pub struct AblationSpec {
    pub base: TrainConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<u8>,
    pub rho: f64,
    /// Worker threads; `None` reads `PUSHBOUND_THREADS`, else all cores.
    pub threads: Option<usize>,
}

impl AblationSpec {
    pub fn new(base: TrainConfig, seeds: Vec<u64>) -> Self {
        Self {
            base,
            seeds,
            variants: vec![1, 2, 3, 4, 5],
            rho: DEFAULT_RHO,
            threads: None,
        }
    }

    /// Training config of one cell. Every variant of a seed shares the
    /// scenes and the initialization seed.
    pub fn cell_config(&self, variant: u8, seed: u64) -> TrainConfig {
        let mut cfg = self.base.clone();
        cfg.variant = variant;
        cfg.seed = seed;
        cfg.data.scene_seed = self.base.data.scene_seed + seed * 1000;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub variant: u8,
    pub seed: u64,
    pub global: SceneMetrics,
    pub boundary: Option<SceneMetrics>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub cells: Vec<AblationCell>,
    pub class_names: Vec<String>,
}

fn thread_count(spec: &AblationSpec) -> usize {
    spec.threads
        .or_else(|| std::env::var("PUSHBOUND_THREADS").ok().and_then(|v| v.parse().ok()))
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Trains and evaluates every `(variant, seed)` cell. Cells run in parallel;
/// the result is ordered by seed, then variant, and does not depend on the
/// thread count.
pub fn run_ablation(spec: &AblationSpec) -> Result<AblationResult> {
    if spec.seeds.is_empty() {
        return Err(Error::Scene("ablation needs at least one seed".into()));
    }
    if spec.variants.is_empty() {
        return Err(Error::Scene("ablation needs at least one variant".into()));
    }
    let mut seeds = spec.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    for &v in &spec.variants {
        spec.cell_config(v, seeds[0]).validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(spec))
        .build()
        .map_err(|e| Error::Scene(format!("thread pool: {e}")))?;

    pool.install(|| {
        // scenes depend only on the seed: prepare once, share across variants
        let data: Vec<(Vec<PreparedScene>, Vec<PreparedScene>)> = seeds
            .par_iter()
            .map(|&seed| {
                let cfg = spec.cell_config(5, seed);
                let (net, _) = cfg.resolved()?;
                let probe = Model::new(net, seed)?;
                Ok((
                    prepare_specs(&cfg.data.train_specs(), &probe)?,
                    prepare_specs(&cfg.data.test_specs(), &probe)?,
                ))
            })
            .collect::<Result<_>>()?;
        let jobs: Vec<(usize, u8)> = (0..seeds.len())
            .flat_map(|s| spec.variants.iter().map(move |&v| (s, v)))
            .collect();
        let cells = jobs
            .par_iter()
            .map(|&(si, variant)| {
                let seed = seeds[si];
                let cfg = spec.cell_config(variant, seed);
                let (train_scenes, test_scenes) = &data[si];
                let out = train(&cfg, train_scenes)?;
                let report = evaluate(&out.model, test_scenes, spec.rho)?;
                log::info!("variant {variant} seed {seed}: mIoU {:.4}", report.global.miou);
                Ok(AblationCell {
                    variant,
                    seed,
                    global: report.global,
                    boundary: report.boundary.flatten(),
                    final_loss: out.log.last().map_or(f64::NAN, |e| e.loss.total),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AblationResult {
            cells,
            class_names: INDOOR_CLASSES.iter().map(|s| s.to_string()).collect(),
        })
    })
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = v.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl AblationResult {
    pub fn csv(&self) -> String {
        let mut s = csv_header(&self.class_names, true);
        s.push('\n');
        for c in &self.cells {
            s.push_str(&csv_row(&c.variant.to_string(), c.seed, &c.global, Some(c.boundary.as_ref())));
            s.push('\n');
        }
        s
    }

    fn cells_of(&self, variant: u8) -> impl Iterator<Item = &AblationCell> {
        self.cells.iter().filter(move |c| c.variant == variant)
    }

    pub fn mean_oa(&self, variant: u8) -> Option<f64> {
        mean(self.cells_of(variant).map(|c| c.global.oa))
    }

    pub fn mean_miou(&self, variant: u8) -> Option<f64> {
        mean(self.cells_of(variant).map(|c| c.global.miou))
    }

    pub fn mean_boundary_miou(&self, variant: u8) -> Option<f64> {
        mean(self.cells_of(variant).filter_map(|c| c.boundary.as_ref().map(|b| b.miou)))
    }

    /// Per-seed boundary-region mIoU of variant 5 minus variant 4.
    pub fn gfp_minus_sfp(&self) -> Vec<(u64, f64)> {
        self.cells_of(5)
            .filter_map(|g| {
                let s = self.cells.iter().find(|c| c.variant == 4 && c.seed == g.seed)?;
                Some((g.seed, g.boundary.as_ref()?.miou - s.boundary.as_ref()?.miou))
            })
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("variant,mean_oa,mean_miou,mean_boundary_miou,gfp_minus_sfp\n");
        let delta = mean(self.gfp_minus_sfp().into_iter().map(|(_, d)| d));
        let mut variants: Vec<u8> = self.cells.iter().map(|c| c.variant).collect();
        variants.sort_unstable();
        variants.dedup();
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        for v in variants {
            let d = if v == 5 { f(delta) } else { String::new() };
            let _ = writeln!(
                s,
                "{v},{},{},{},{d}",
                f(self.mean_oa(v)),
                f(self.mean_miou(v)),
                f(self.mean_boundary_miou(v))
            );
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::from("variant  mean_oa  mean_miou  mean_boundary_miou\n");
        let mut variants: Vec<u8> = self.cells.iter().map(|c| c.variant).collect();
        variants.sort_unstable();
        variants.dedup();
        let f = |v: Option<f64>| v.map_or_else(|| "    NA".to_string(), |x| format!("{x:.4}"));
        for v in variants {
            let _ = writeln!(
                s,
                "{v:>7}  {}   {}     {}",
                f(self.mean_oa(v)),
                f(self.mean_miou(v)),
                f(self.mean_boundary_miou(v))
            );
        }
        let deltas = self.gfp_minus_sfp();
        if let Some(d) = mean(deltas.iter().map(|x| x.1)) {
            let signs: Vec<String> = deltas
                .iter()
                .map(|(seed, d)| format!("{seed}:{}", if *d > 0.0 { '+' } else if *d < 0.0 { '-' } else { '0' }))
                .collect();
            let _ = writeln!(s, "GFP - SFP boundary mIoU: {d:+.4} (per seed {})", signs.join(" "));
        }
        s.push_str("reference full-scale mIoU (%), not asserted:");
        for (v, m) in PAPER_REFERENCE {
            let _ = write!(s, " ({v}) {m}");
        }
        s.push('\n');
        s
    }
}
