// SPDX-License-Identifier: Apache-2.0

//! Box and caption rendering for classified detections.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::geometry::{Detection, GazeClass};

const THICKNESS: i64 = 2;
const FONT_SCALE: i64 = 2;
const GLYPH_W: i64 = 5;
const GLYPH_H: i64 = 7;
const UNCLASSIFIED: Rgb<u8> = Rgb([0, 170, 255]);

pub fn class_color(class: Option<GazeClass>) -> Rgb<u8> {
    match class {
        Some(GazeClass::None) => Rgb([0, 255, 0]),
        Some(GazeClass::Medium) => Rgb([255, 165, 0]),
        Some(GazeClass::Long) => Rgb([255, 0, 0]),
        None => UNCLASSIFIED,
    }
}

/// 5x7 bitmap rows, most significant of the low 5 bits is the left column.
fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0, 0, 0, 0, 0, 0x0C, 0x0C],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        _ => [0; 7],
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && x < img.width() as i64 && y < img.height() as i64 {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn fill(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
    for y in y0..y1 {
        for x in x0..x1 {
            put(img, x, y, c);
        }
    }
}

/// Caption text for one detection.
pub fn caption(det: &Detection, class: Option<GazeClass>) -> String {
    match class {
        Some(c) => format!("{} {:.2}", c.name().to_ascii_uppercase(), det.score),
        None => format!("{:.2}", det.score),
    }
}

/// Pixel extent `(x0, y0, x1, y1)` of the caption box for a detection.
pub fn caption_rect(det: &Detection, text: &str) -> (i64, i64, i64, i64) {
    let w = text.chars().count() as i64 * (GLYPH_W + 1) * FONT_SCALE + FONT_SCALE;
    let h = (GLYPH_H + 2) * FONT_SCALE;
    let x0 = det.bbox.x1.floor() as i64;
    let top = det.bbox.y1.floor() as i64;
    let y0 = if top - h >= 0 { top - h } else { top };
    (x0, y0, x0 + w, y0 + h)
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, c: Rgb<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let gx = x + i as i64 * (GLYPH_W + 1) * FONT_SCALE;
        for (row, bits) in glyph(ch).iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits >> (GLYPH_W - 1 - col) & 1 == 1 {
                    let px = gx + col * FONT_SCALE;
                    let py = y + row as i64 * FONT_SCALE;
                    fill(img, px, py, px + FONT_SCALE, py + FONT_SCALE, c);
                }
            }
        }
    }
}

/// Draw every detection's outline and caption on a copy of `img`.
pub fn annotate(img: &RgbImage, items: &[(Detection, Option<GazeClass>)]) -> RgbImage {
    let mut out = img.clone();
    for (det, class) in items {
        let color = class_color(*class);
        let b = det.bbox;
        let (x0, y0) = (b.x1.floor() as i64, b.y1.floor() as i64);
        let (x1, y1) = ((b.x2.ceil() as i64).max(x0 + 1), (b.y2.ceil() as i64).max(y0 + 1));
        let t = THICKNESS;
        fill(&mut out, x0, y0, x1, (y0 + t).min(y1), color);
        fill(&mut out, x0, (y1 - t).max(y0), x1, y1, color);
        fill(&mut out, x0, y0, (x0 + t).min(x1), y1, color);
        fill(&mut out, (x1 - t).max(x0), y0, x1, y1, color);

        let text = caption(det, *class);
        let (cx0, cy0, cx1, cy1) = caption_rect(det, &text);
        fill(&mut out, cx0, cy0, cx1, cy1, color);
        draw_text(&mut out, cx0 + FONT_SCALE, cy0 + FONT_SCALE, &text, Rgb([0, 0, 0]));
    }
    out
}

pub fn annotate_file(image: &Path, items: &[(Detection, Option<GazeClass>)], out: &Path) -> Result<()> {
    let img = crate::imaging::load_rgb(image)?;
    annotate(&img, items).save(out)?;
    Ok(())
}
