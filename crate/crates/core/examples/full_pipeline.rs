// SPDX-License-Identifier: Apache-2.0

//! Whole pipeline on the bundled dataset with the stub backend.
//!
//! `cargo run --release --example full_pipeline [-- out_dir]`

use std::path::PathBuf;

use billboard_gaze::config::PipelineConfig;
use billboard_gaze::pipeline::run_pipeline;
use billboard_gaze::synth::fixture_config;

fn main() -> billboard_gaze::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "pipeline_out".into()));
    let mut cfg = PipelineConfig::from_toml(&fixture_config())?;
    cfg.dataset_root = Some(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini_lamac").into());
    cfg.features.spec = "B,Ifull".parse()?;
    for p in run_pipeline(&cfg, &out, 1)? {
        println!("{}", p.display());
    }
    let report = std::fs::read_to_string(out.join("report.json"))?;
    println!("{report}");
    Ok(())
}
