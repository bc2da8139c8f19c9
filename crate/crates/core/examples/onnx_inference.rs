// SPDX-License-Identifier: Apache-2.0

//! Load ONNX graphs, inspect their tensor specs and run them.
//!
//! `cargo run --example onnx_inference [-- detector.onnx embedder.onnx]`

use std::path::PathBuf;

use billboard_gaze::backend::{load_model, BackendKind};
use billboard_gaze::detector::{detect, DetectorConfig};
use billboard_gaze::features::{embed, EmbeddingSource};
use image::{Rgb, RgbImage};

fn main() -> billboard_gaze::Result<()> {
    let fixtures = PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures"));
    let mut args = std::env::args().skip(1);
    let det_path = args.next().map(PathBuf::from).unwrap_or_else(|| fixtures.join("tiny_detector.onnx"));
    let emb_path = args.next().map(PathBuf::from).unwrap_or_else(|| fixtures.join("tiny_embedder.onnx"));

    let detector = load_model(&det_path, BackendKind::GraphRuntime)?;
    let embedder = load_model(&emb_path, BackendKind::GraphRuntime)?;
    println!("detector  in {:?} out {:?}", detector.input_specs, detector.output_specs);
    println!("embedder  in {:?} out {:?}", embedder.input_specs, embedder.output_specs);

    let img = RgbImage::from_fn(128, 96, |x, y| Rgb([(2 * x) as u8, (2 * y) as u8, 128]));
    let size = detector.input_specs[0].shape[2].max(32) as u32;
    let cfg = DetectorConfig {
        input_size: size,
        // the bundled graph is untrained, so keep every candidate
        conf_threshold: 0.0,
        ..DetectorConfig::default()
    };
    let dets = detect(&img, &detector, &cfg)?;
    println!("{} detections", dets.len());
    for d in dets.iter().take(3) {
        println!("  {:?} score {:.3}", d.bbox, d.score);
    }
    let e = embed(&img, &embedder, EmbeddingSource::Full)?;
    println!("embedding[..4] = {:?}", &e.values[..4]);
    Ok(())
}
