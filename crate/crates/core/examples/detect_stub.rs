// SPDX-License-Identifier: Apache-2.0

//! Letterbox, decode and suppress with the deterministic stub detector.
//!
//! `cargo run --example detect_stub`

use billboard_gaze::detector::{detect, preprocess, stub_detector, DetectorConfig};
use image::{Rgb, RgbImage};

fn main() -> billboard_gaze::Result<()> {
    let img = RgbImage::from_fn(480, 270, |x, y| Rgb([(x / 2) as u8, (y / 2) as u8, 90]));
    let cfg = DetectorConfig {
        input_size: 320,
        conf_threshold: 0.9,
        ..DetectorConfig::default()
    };

    let (_, t) = preprocess(&img, &cfg)?;
    println!("letterbox: scale {:.4}, pad ({}, {})", t.scale, t.pad_x, t.pad_y);

    let model = stub_detector(cfg.input_size, 7)?;
    let dets = detect(&img, &model, &cfg)?;
    println!("{} detections above {}", dets.len(), cfg.conf_threshold);
    for d in dets.iter().take(5) {
        let b = d.bbox;
        println!("  ({:6.1}, {:6.1}) - ({:6.1}, {:6.1})  score {:.3}", b.x1, b.y1, b.x2, b.y2, d.score);
    }
    Ok(())
}
