// SPDX-License-Identifier: Apache-2.0

//! Pixel-level helpers: loading, bilinear sampling, channel-first tensors.

use std::path::Path;

use image::RgbImage;
use ndarray::Array4;

use crate::error::{Error, Result};

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(image::open(path)?.to_rgb8())
}

/// Bilinear sample at source coordinates where pixel centers sit on integers.
/// Out-of-range coordinates replicate the border.
pub fn bilinear(img: &RgbImage, sx: f64, sy: f64) -> [f32; 3] {
    let (w, h) = img.dimensions();
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let x0 = sx.floor() as u32;
    let y0 = sy.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (sx - x0 as f64) as f32;
    let fy = (sy - y0 as f64) as f32;
    let p00 = img.get_pixel(x0, y0).0;
    let p10 = img.get_pixel(x1, y0).0;
    let p01 = img.get_pixel(x0, y1).0;
    let p11 = img.get_pixel(x1, y1).0;
    let mut out = [0f32; 3];
    for c in 0..3 {
        let top = p00[c] as f32 * (1.0 - fx) + p10[c] as f32 * fx;
        let bottom = p01[c] as f32 * (1.0 - fx) + p11[c] as f32 * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Squash-resize `img` to `out_w x out_h` and return a `(1, 3, out_h, out_w)`
/// tensor with `(v / 255 - mean[c]) / std[c]` per channel.
pub fn resize_normalized(
    img: &RgbImage,
    out_w: usize,
    out_h: usize,
    mean: [f32; 3],
    std: [f32; 3],
) -> Result<Array4<f32>> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::DegenerateBox);
    }
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let mut t = Array4::<f32>::zeros((1, 3, out_h, out_w));
    for y in 0..out_h {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..out_w {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            let px = bilinear(img, src_x, src_y);
            for c in 0..3 {
                t[[0, c, y, x]] = (px[c] / 255.0 - mean[c]) / std[c];
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn bilinear_hits_pixel_centers_exactly() {
        let img = RgbImage::from_fn(4, 3, |x, y| Rgb([(x * 10) as u8, (y * 20) as u8, 7]));
        assert_eq!(bilinear(&img, 2.0, 1.0), [20.0, 20.0, 7.0]);
        assert_eq!(bilinear(&img, 2.5, 1.0), [25.0, 20.0, 7.0]);
        // border replicate
        assert_eq!(bilinear(&img, -3.0, 10.0), [0.0, 40.0, 7.0]);
    }

    #[test]
    fn same_size_resize_is_value_rescale() {
        let img = RgbImage::from_fn(5, 5, |x, y| Rgb([(x * 50) as u8, (y * 50) as u8, 255]));
        let t = resize_normalized(&img, 5, 5, [0.0; 3], [1.0; 3]).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(t[[0, 0, y, x]], (x * 50) as f32 / 255.0);
                assert_eq!(t[[0, 1, y, x]], (y * 50) as f32 / 255.0);
                assert_eq!(t[[0, 2, y, x]], 1.0);
            }
        }
    }
}
