// SPDX-License-Identifier: Apache-2.0

//! Regenerate the bundled miniature dataset.
//!
//! `cargo run --example make_fixture [-- <dir>]`

use std::path::PathBuf;

fn main() -> billboard_gaze::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini_lamac")));
    billboard_gaze::synth::write_fixture_dataset(&dir, 2024)?;
    println!("{}", dir.display());
    Ok(())
}
