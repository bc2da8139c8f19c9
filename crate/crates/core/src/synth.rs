// SPDX-License-Identifier: Apache-2.0

//! Deterministic generated data: a miniature dataset tree for the stub
//! backend, and labelled feature sets with a known decision rule.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::detector::{detect, stub_detector, DetectorConfig};
use crate::error::Result;
use crate::features::{sample_id, FeatureRow};
use crate::geometry::{iou, to_norm, BBox, Detection, GazeClass};

pub const FIXTURE_INPUT_SIZE: u32 = 320;
pub const FIXTURE_STUB_SEED: u64 = 7;
pub const FIXTURE_WIDTH: u32 = 160;
pub const FIXTURE_HEIGHT: u32 = 120;

/// Config text matching the generated tree.
pub fn fixture_config() -> String {
    format!(
        "backend = \"stub\"\nstub_seed = {FIXTURE_STUB_SEED}\n\n[detector]\ninput_size = {FIXTURE_INPUT_SIZE}\n"
    )
}

fn scene(rng: &mut ChaCha8Rng) -> RgbImage {
    let sky: [f32; 3] = std::array::from_fn(|_| rng.random_range(90.0..200.0));
    let road: [f32; 3] = std::array::from_fn(|_| rng.random_range(30.0..110.0));
    let mut img = RgbImage::from_fn(FIXTURE_WIDTH, FIXTURE_HEIGHT, |_, y| {
        let t = y as f32 / (FIXTURE_HEIGHT - 1) as f32;
        Rgb(std::array::from_fn(|c| (sky[c] * (1.0 - t) + road[c] * t) as u8))
    });
    for _ in 0..rng.random_range(2..5) {
        let w = rng.random_range(10..50);
        let h = rng.random_range(8..30);
        let x0 = rng.random_range(0..FIXTURE_WIDTH - w);
        let y0 = rng.random_range(0..FIXTURE_HEIGHT - h);
        let c = Rgb(std::array::from_fn(|_| rng.random_range(0..=255u8)));
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                img.put_pixel(x, y, c);
            }
        }
    }
    img
}

/// Detections large enough to serve as labelled billboards, pairwise
/// non-overlapping, in detector rank order.
fn usable(dets: &[Detection], max: usize) -> Vec<BBox> {
    let (w, h) = (FIXTURE_WIDTH as f64, FIXTURE_HEIGHT as f64);
    let mut out: Vec<BBox> = Vec::new();
    for d in dets {
        let b = d.bbox;
        let inside = b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= w && b.y2 <= h;
        if inside && b.width() >= 6.0 && b.height() >= 6.0 && out.iter().all(|o| iou(o, &b) == 0.0) {
            out.push(b);
            if out.len() == max {
                break;
            }
        }
    }
    out
}

/// Write the miniature dataset tree under `root`: 12 billboards (3 in the
/// test split), 2 drivers, 3 to 12 frames per (billboard, driver) and a
/// second billboard in every fourth frame. Gaze labels cycle through the
/// classes by billboard. GT boxes are stub detections, so association
/// succeeds under the stub backend with [`fixture_config`].
pub fn write_fixture_dataset(root: &Path, seed: u64) -> Result<()> {
    let cfg = DetectorConfig {
        input_size: FIXTURE_INPUT_SIZE,
        ..DetectorConfig::default()
    };
    let model = stub_detector(FIXTURE_INPUT_SIZE, FIXTURE_STUB_SEED)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_bb = 12;
    let n_test = 3;
    let id = |b: usize| format!("bb{b:02}");
    let label = |b: usize| GazeClass::ALL[b % 3];
    let split = |b: usize| if b >= n_bb - n_test { "test" } else { "train" };

    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("labels"))?;
    let mut manifest = String::from("frame,billboard_id,driver_id,gaze_class,split\n");
    let mut frame_no = 0usize;
    for b in 0..n_bb {
        for d in 0..2 {
            let n_frames = [3, 5, 8, 12][(b + d) % 4];
            for i in 0..n_frames {
                let frame = format!("drv{d}/{}_{i:02}.png", id(b));
                frame_no += 1;
                let img = scene(&mut rng);
                let dets = detect(&img, &model, &cfg)?;
                // a partner from the same split shares every fourth frame
                let partner = frame_no.is_multiple_of(4).then(|| {
                    let same: Vec<usize> = (0..n_bb).filter(|&o| o != b && split(o) == split(b)).collect();
                    same[frame_no % same.len()]
                });
                let boxes = usable(&dets, 1 + partner.is_some() as usize);
                let members: Vec<usize> = std::iter::once(b).chain(partner).take(boxes.len()).collect();

                let img_path = root.join("images").join(&frame);
                fs::create_dir_all(img_path.parent().unwrap())?;
                img.save(&img_path)?;
                let mut labels = String::new();
                for (bb, m) in boxes.iter().zip(&members) {
                    let nb = to_norm(bb, FIXTURE_WIDTH as f64, FIXTURE_HEIGHT as f64)?;
                    writeln!(labels, "0 {:.6} {:.6} {:.6} {:.6}", nb.cx, nb.cy, nb.w, nb.h).unwrap();
                    writeln!(manifest, "{frame},{},drv{d},{},{}", id(*m), label(*m).index(), split(*m)).unwrap();
                }
                let lp = root.join("labels").join(Path::new(&frame).with_extension("txt"));
                fs::create_dir_all(lp.parent().unwrap())?;
                fs::write(lp, labels)?;
            }
        }
    }
    fs::write(root.join("manifest.csv"), manifest)?;
    let mut split_file = String::from("# test billboards\n");
    for b in n_bb - n_test..n_bb {
        writeln!(split_file, "{}", id(b)).unwrap();
    }
    fs::write(root.join("test_billboards.txt"), split_file)?;
    fs::write(root.join("bgz.toml"), fixture_config())?;
    Ok(())
}

/// Decision rule of the recovery set: wide boxes are long glances, narrow
/// boxes on the left are medium, the rest none.
pub fn recovery_label(cx: f64, w: f64) -> GazeClass {
    if w > 0.25 {
        GazeClass::Long
    } else if cx < 0.5 {
        GazeClass::Medium
    } else {
        GazeClass::None
    }
}

/// Labelled rows in the `[B | 2k noise]` layout. Each billboard draws a latent
/// `(cx, w)` at least `margin` from both rule boundaries; its samples jitter
/// the latent by `N(0, jitter)`.
pub fn recovery_rows(
    n_billboards: usize,
    per_billboard: usize,
    k: usize,
    jitter: f64,
    margin: f64,
    seed: u64,
) -> Vec<FeatureRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, jitter).expect("finite jitter");
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::with_capacity(n_billboards * per_billboard);
    for b in 0..n_billboards {
        let (cx, w) = loop {
            let cx: f64 = rng.random_range(0.1..0.9);
            let w: f64 = rng.random_range(0.05..0.45);
            let clear_w = (w - 0.25).abs() > margin;
            let clear_cx = w > 0.25 || (cx - 0.5).abs() > margin;
            if clear_w && clear_cx {
                break (cx, w);
            }
        };
        let label = recovery_label(cx, w);
        let cy: f64 = rng.random_range(0.2..0.8);
        for s in 0..per_billboard {
            let mut v = vec![
                cx + noise.sample(&mut rng),
                cy + noise.sample(&mut rng),
                w + noise.sample(&mut rng),
                0.5 * w + noise.sample(&mut rng),
            ];
            v.extend((0..2 * k).map(|_| unit.sample(&mut rng)));
            let bid = format!("syn{b:03}");
            rows.push(FeatureRow {
                sample_id: sample_id(&format!("f{s:02}"), &bid),
                billboard_id: bid,
                driver_id: "d0".into(),
                vector: v,
                label: Some(label),
            });
        }
    }
    rows
}
