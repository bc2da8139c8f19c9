// SPDX-License-Identifier: Apache-2.0

//! Grouped random search over both learners, then a bundle round trip.
//!
//! `cargo run --release --example train_classifier`

use billboard_gaze::classifier::{cv_tune, decode_bundle, encode_bundle, CvPlan, SearchSpace, TrainSet};
use billboard_gaze::features::FeatureSpec;
use billboard_gaze::synth::recovery_rows;

fn main() -> billboard_gaze::Result<()> {
    let rows = recovery_rows(30, 6, 3, 0.01, 0.03, 5);
    let groups: Vec<String> = rows.iter().map(|r| r.billboard_id.clone()).collect();
    let data = TrainSet::new(
        rows.iter().map(|r| r.vector.clone()).collect(),
        rows.iter().map(|r| r.label.unwrap()).collect(),
    )?;

    let plan = CvPlan::new(groups.iter().map(String::as_str), 5, 42)?;
    let space = SearchSpace {
        n_configs: 8,
        ..SearchSpace::default()
    };
    let (model, report) = cv_tune(&data, &groups, &plan, &space, FeatureSpec::all(3), 1)?;
    for (kind, idx) in &report.chosen {
        println!("{kind:?}: config {idx} {:?}, mean fold macro-F1 {:.3}", report.configs[*idx], report.scores[kind][*idx]);
    }
    println!("weights {:?}, blended macro-F1 {:.3}", report.weights, report.weight_score);

    let bytes = encode_bundle(&model)?;
    let back = decode_bundle(&bytes, "memory")?;
    println!("bundle: {} bytes, p(row 0) = {:?}", bytes.len(), back.predict_proba(&rows[0].vector)?);
    Ok(())
}
