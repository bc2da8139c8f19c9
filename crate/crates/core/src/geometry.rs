// SPDX-License-Identifier: Apache-2.0

//! Geometric primitives shared by the whole pipeline.
//!
//! Boxes live in corner form ([`BBox`], source-image pixels) everywhere except
//! at the classifier feature boundary, where they become [`NormBBox`]
//! (center/size as fractions of the image dimensions).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        debug_assert!(x2 >= x1 && y2 >= y1, "inverted box ({x1},{y1},{x2},{y2})");
        Self { x1, y1, x2, y2 }
    }

    pub fn from_cxcywh(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        let (w, h) = (w.max(0.0), h.max(0.0));
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Clamp to `[0, img_w] x [0, img_h]`.
    pub fn clamp(&self, img_w: f64, img_h: f64) -> Self {
        let x1 = self.x1.clamp(0.0, img_w);
        let y1 = self.y1.clamp(0.0, img_h);
        Self {
            x1,
            y1,
            x2: self.x2.clamp(x1, img_w),
            y2: self.y2.clamp(y1, img_h),
        }
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Box as center and size, each a fraction of the image width/height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl NormBBox {
    pub fn to_bbox(&self, img_w: f64, img_h: f64) -> BBox {
        BBox::from_cxcywh(self.cx * img_w, self.cy * img_h, self.w * img_w, self.h * img_h)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }
}

/// Clamp `bbox` to the image and express it in normalized center form.
pub fn to_norm(bbox: &BBox, img_w: f64, img_h: f64) -> Result<NormBBox> {
    if !(img_w > 0.0 && img_h > 0.0) {
        return Err(Error::invalid(format!("image size {img_w}x{img_h}")));
    }
    let b = bbox.clamp(img_w, img_h);
    if b.area() <= 0.0 {
        return Err(Error::DegenerateBox);
    }
    Ok(NormBBox {
        cx: (b.x1 + b.x2) / (2.0 * img_w),
        cy: (b.y1 + b.y2) / (2.0 * img_h),
        w: (b.x2 - b.x1) / img_w,
        h: (b.y2 - b.y1) / img_h,
    })
}

/// A scored detector box. Single class: `class_id` is 0 for "billboard".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: u32,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Self {
        Self {
            bbox,
            score,
            class_id: 0,
        }
    }
}

/// Driver gaze-duration class. `None` means no fixation, `Medium` a fixation
/// of at most 250 ms, `Long` anything above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GazeClass {
    None = 0,
    Medium = 1,
    Long = 2,
}

impl GazeClass {
    pub const ALL: [GazeClass; 3] = [GazeClass::None, GazeClass::Medium, GazeClass::Long];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("gaze class index {i} outside {{0,1,2}}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            GazeClass::None => "none",
            GazeClass::Medium => "medium",
            GazeClass::Long => "long",
        }
    }

    /// Index of the largest entry; ties go to the lower class.
    pub fn argmax(probs: &[f64; 3]) -> Self {
        let mut best = 0;
        for k in 1..3 {
            if probs[k] > probs[best] {
                best = k;
            }
        }
        Self::ALL[best]
    }
}

impl fmt::Display for GazeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GazeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "none" => Ok(GazeClass::None),
            "1" | "medium" => Ok(GazeClass::Medium),
            "2" | "long" => Ok(GazeClass::Long),
            other => Err(Error::invalid(format!("unknown gaze class `{other}`"))),
        }
    }
}

/// Aspect-preserving resize with symmetric padding into a `dst_w x dst_h` canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LetterboxTransform {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
    pub src_w: f64,
    pub src_h: f64,
    pub dst_w: f64,
    pub dst_h: f64,
}

impl LetterboxTransform {
    pub fn new(src_w: u32, src_h: u32, dst_w: u32, dst_h: u32) -> Result<Self> {
        if src_w == 0 || src_h == 0 || dst_w == 0 || dst_h == 0 {
            return Err(Error::invalid(format!(
                "letterbox {src_w}x{src_h} -> {dst_w}x{dst_h}"
            )));
        }
        let (sw, sh, dw, dh) = (src_w as f64, src_h as f64, dst_w as f64, dst_h as f64);
        let scale = (dw / sw).min(dh / sh);
        Ok(Self {
            scale,
            pad_x: ((dw - scale * sw) / 2.0).max(0.0),
            pad_y: ((dh - scale * sh) / 2.0).max(0.0),
            src_w: sw,
            src_h: sh,
            dst_w: dw,
            dst_h: dh,
        })
    }

    pub fn map_point(&self, x: f64, y: f64) -> (f64, f64) {
        (x * self.scale + self.pad_x, y * self.scale + self.pad_y)
    }

    pub fn unmap_point(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.pad_x) / self.scale, (y - self.pad_y) / self.scale)
    }

    pub fn map(&self, b: &BBox) -> BBox {
        let (x1, y1) = self.map_point(b.x1, b.y1);
        let (x2, y2) = self.map_point(b.x2, b.y2);
        BBox { x1, y1, x2, y2 }
    }

    pub fn unmap(&self, b: &BBox) -> BBox {
        let (x1, y1) = self.unmap_point(b.x1, b.y1);
        let (x2, y2) = self.unmap_point(b.x2, b.y2);
        BBox { x1, y1, x2, y2 }
    }
}
