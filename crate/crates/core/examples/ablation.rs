// SPDX-License-Identifier: Apache-2.0

//! All seven feature-family combinations on the bundled dataset.
//!
//! `cargo run --release --example ablation [-- out_dir]`

use std::path::PathBuf;

use billboard_gaze::config::PipelineConfig;
use billboard_gaze::pipeline::run_ablation;
use billboard_gaze::synth::fixture_config;

fn main() -> billboard_gaze::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "ablation_out".into()));
    let mut cfg = PipelineConfig::from_toml(&fixture_config())?;
    cfg.dataset_root = Some(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini_lamac").into());
    cfg.classifier.search.n_configs = 8;
    let (rows, _) = run_ablation(&cfg, &out, 1)?;
    println!("{:<14} {:>8} {:>8} {:>8} {:>8}", "features", "acc", "macroF1", "agg acc", "agg mF1");
    for r in rows {
        println!(
            "{:<14} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            r.spec, r.per_detection.accuracy, r.per_detection.macro_f1, r.aggregated.accuracy, r.aggregated.macro_f1
        );
    }
    Ok(())
}
