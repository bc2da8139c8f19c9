// SPDX-License-Identifier: Apache-2.0

//! Per-billboard probability voting.
//!
//! `cargo run --example aggregate_votes`

use billboard_gaze::classifier::aggregate;

fn main() {
    let preds = [
        ("bb01", [0.5, 0.3, 0.2]),
        ("bb01", [0.1, 0.6, 0.3]),
        ("bb02", [0.5, 0.5, 0.0]),
        ("bb03", [0.2, 0.2, 0.6]),
    ];
    for (id, (sum, class)) in aggregate(preds) {
        println!("{id}: summed {sum:?} -> {class}");
    }
}
