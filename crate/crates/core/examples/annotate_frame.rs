// SPDX-License-Identifier: Apache-2.0

//! Draw class-colored boxes and captions.
//!
//! `cargo run --example annotate_frame [-- out.png]`

use billboard_gaze::render::annotate;
use billboard_gaze::{BBox, Detection, GazeClass};
use image::{Rgb, RgbImage};

fn main() -> billboard_gaze::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "annotated.png".into());
    let img = RgbImage::from_fn(320, 200, |_, y| Rgb([120, 140, (100 + y / 2) as u8]));
    let items = [
        (Detection::new(BBox::new(20.0, 60.0, 110.0, 120.0), 0.91), Some(GazeClass::Long)),
        (Detection::new(BBox::new(150.0, 40.0, 200.0, 80.0), 0.64), Some(GazeClass::Medium)),
        (Detection::new(BBox::new(230.0, 120.0, 300.0, 180.0), 0.48), Some(GazeClass::None)),
    ];
    annotate(&img, &items).save(&out)?;
    println!("{out}");
    Ok(())
}
