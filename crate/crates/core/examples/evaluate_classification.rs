// SPDX-License-Identifier: Apache-2.0

//! Accuracy, F1 variants and the confusion matrix.
//!
//! `cargo run --example evaluate_classification`

use billboard_gaze::evaluation::classification_report;
use billboard_gaze::GazeClass::{self, Long, Medium, None};

fn main() -> billboard_gaze::Result<()> {
    let truth = [None, None, Medium, Medium, Long, Long];
    let always_medium = [Medium; 6];
    let r = classification_report(&truth, &always_medium)?;
    println!("always medium: accuracy {:.4}, macro-F1 {:.4}", r.accuracy, r.macro_f1);

    let pred: Vec<GazeClass> = vec![None, Medium, Medium, Medium, Long, None];
    let r = classification_report(&truth, &pred)?;
    println!("{}", serde_json::to_string_pretty(&r.to_json())?);
    Ok(())
}
