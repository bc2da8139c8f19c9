// SPDX-License-Identifier: Apache-2.0

//! Greedy matching, 101-point AP and mAP@50-95 on a hand-made fixture.
//!
//! `cargo run --example evaluate_detections`

use std::collections::BTreeMap;

use billboard_gaze::evaluation::{average_precision, evaluate_detections, IouSpec};
use billboard_gaze::{BBox, Detection};

fn main() {
    // two GT boxes; ranked hits TP, FP, TP
    let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2);
    println!("AP of TP/FP/TP over 2 GT: {ap:.6}");

    let gts = BTreeMap::from([
        ("a.png".to_string(), vec![BBox::new(10.0, 10.0, 50.0, 40.0)]),
        ("b.png".to_string(), vec![BBox::new(0.0, 0.0, 20.0, 20.0), BBox::new(60.0, 60.0, 90.0, 80.0)]),
    ]);
    let preds = BTreeMap::from([
        ("a.png".to_string(), vec![Detection::new(BBox::new(12.0, 11.0, 50.0, 42.0), 0.95)]),
        (
            "b.png".to_string(),
            vec![
                Detection::new(BBox::new(1.0, 0.0, 21.0, 19.0), 0.80),
                Detection::new(BBox::new(30.0, 30.0, 40.0, 40.0), 0.60),
            ],
        ),
    ]);
    let r = evaluate_detections(&preds, &gts, IouSpec::Single(0.5));
    println!("{}", serde_json::to_string_pretty(&r.to_json()).unwrap());
}
