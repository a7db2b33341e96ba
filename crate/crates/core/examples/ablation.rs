//! Trains and evaluates the five variants over several seeds and prints
//! the per-variant means and the guided-minus-standard delta.
//!
//! cargo run --release --example ablation [-- CONFIG [SEEDS [VARIANTS]]]
//!
//! SEEDS and VARIANTS are comma-separated lists (default `0,1,2,3,4` and
//! `1,2,3,4,5`).

use std::time::Instant;

use pushbound::pipeline::{ablation_config, run_ablation, AblationSpec};

fn main() -> pushbound::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(path) => pushbound::config::load(path.as_ref(), ablation_config())?,
        None => ablation_config(),
    };
    let mut list = |default: &str| -> Vec<u64> {
        let text = args.next().unwrap_or_else(|| default.into());
        text.split(',').map(|s| s.trim().parse().expect("integer list")).collect()
    };
    let seeds = list("0,1,2,3,4");
    let variants = list("1,2,3,4,5").into_iter().map(|v| v as u8).collect();
    let mut spec = AblationSpec::new(cfg, seeds);
    spec.variants = variants;
    let start = Instant::now();
    let result = run_ablation(&spec)?;
    print!("{}", result.csv());
    print!("{}", result.summary_text());
    println!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
