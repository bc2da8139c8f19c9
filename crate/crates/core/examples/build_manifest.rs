// SPDX-License-Identifier: Apache-2.0

//! Validate the bundled dataset tree and print its counts.
//!
//! `cargo run --example build_manifest`

use std::path::Path;

use billboard_gaze::dataset::build_manifest;

fn main() -> billboard_gaze::Result<()> {
    let root = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini_lamac"));
    let m = build_manifest(root, &root.join("test_billboards.txt"))?;
    let c = m.counts();
    println!(
        "{} records over {} frames; {} train and {} test billboards; {} drivers",
        c.records, c.frames, c.train_billboards, c.test_billboards, c.drivers
    );
    for r in m.records.iter().take(3) {
        println!("  {} {} {} {} {:?}", r.frame, r.billboard_id, r.driver_id, r.gaze_label, r.gt_box.map(|b| b.as_array()));
    }
    Ok(())
}
