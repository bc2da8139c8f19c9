// SPDX-License-Identifier: Apache-2.0

//! Billboard detection: letterbox preprocessing, anchor-free head decoding,
//! confidence filtering, greedy NMS and mapping back to source pixels.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::{Array4, ArrayD, Ix3};
use serde::{Deserialize, Serialize};

use crate::backend::{ModelHandle, StubOutput, TensorSpec};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, Detection, LetterboxTransform};
use crate::imaging;

/// Gray value used for letterbox padding.
pub const PAD_VALUE: f32 = 114.0 / 255.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub input_size: u32,
    pub conf_threshold: f64,
    pub nms_iou_threshold: f64,
    pub max_detections: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_size: 640,
            conf_threshold: 0.25,
            nms_iou_threshold: 0.70,
            max_detections: 300,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "detector input_size {} is not a positive multiple of 32",
                self.input_size
            )));
        }
        for (name, v) in [
            ("conf_threshold", self.conf_threshold),
            ("nms_iou_threshold", self.nms_iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Number of anchor locations for strides 8, 16 and 32 at a square input.
pub fn anchor_count(input_size: u32) -> usize {
    [8, 16, 32]
        .iter()
        .map(|s| {
            let n = (input_size / s) as usize;
            n * n
        })
        .sum()
}

/// Stub detector whose declared head matches an exported single-class model.
pub fn stub_detector(input_size: u32, seed: u64) -> Result<ModelHandle> {
    let s = input_size as i64;
    let sf = input_size as f32;
    ModelHandle::stub(
        vec![TensorSpec::new("images", vec![1, 3, s, s])?],
        vec![StubOutput::per_channel(
            TensorSpec::new("output0", vec![1, 5, anchor_count(input_size) as i64])?,
            1,
            vec![
                (0.0, sf),
                (0.0, sf),
                (sf / 64.0, sf / 4.0),
                (sf / 64.0, sf / 4.0),
                (0.0, 1.0),
            ],
        )],
        seed,
    )
}

/// Letterbox `img` into a `(1, 3, S, S)` tensor with values in `[0, 1]`.
pub fn preprocess(img: &RgbImage, cfg: &DetectorConfig) -> Result<(Array4<f32>, LetterboxTransform)> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::invalid("empty image"));
    }
    let s = cfg.input_size;
    let t = LetterboxTransform::new(w, h, s, s)?;
    let n = s as usize;
    let mut out = Array4::<f32>::from_elem((1, 3, n, n), PAD_VALUE);
    let (x_lo, x_hi) = (t.pad_x, t.pad_x + t.scale * t.src_w);
    let (y_lo, y_hi) = (t.pad_y, t.pad_y + t.scale * t.src_h);
    for y in 0..n {
        let cy = y as f64 + 0.5;
        if cy < y_lo || cy >= y_hi {
            continue;
        }
        let sy = (cy - t.pad_y) / t.scale - 0.5;
        for x in 0..n {
            let cx = x as f64 + 0.5;
            if cx < x_lo || cx >= x_hi {
                continue;
            }
            let sx = (cx - t.pad_x) / t.scale - 0.5;
            let px = imaging::bilinear(img, sx, sy);
            for c in 0..3 {
                out[[0, c, y, x]] = px[c] / 255.0;
            }
        }
    }
    Ok((out, t))
}

/// Decode a `(1, 5, A)` head into source-pixel detections above the threshold.
pub fn decode(raw: &ArrayD<f32>, t: &LetterboxTransform, cfg: &DetectorConfig) -> Result<Vec<Detection>> {
    let shape = raw.shape();
    if shape.len() != 3 || shape[0] != 1 || shape[1] != 5 {
        return Err(Error::ShapeMismatch {
            name: "detector head".into(),
            expected: vec![1, 5, -1],
            actual: shape.to_vec(),
        });
    }
    let head = raw.view().into_dimensionality::<Ix3>().expect("rank checked");
    let mut dets = Vec::new();
    for a in 0..shape[2] {
        let score = head[[0, 4, a]] as f64;
        if !(score >= cfg.conf_threshold) {
            continue;
        }
        let boxed = BBox::from_cxcywh(
            head[[0, 0, a]] as f64,
            head[[0, 1, a]] as f64,
            head[[0, 2, a]] as f64,
            head[[0, 3, a]] as f64,
        );
        let src = t.unmap(&boxed).clamp(t.src_w, t.src_h);
        if src.area() <= 0.0 {
            continue;
        }
        dets.push(Detection::new(src, score.clamp(0.0, 1.0)));
    }
    Ok(dets)
}

/// Ranking used by NMS: score descending, then x1 and y1 ascending.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
}

/// Greedy class-agnostic NMS. A detection survives iff its IoU with every
/// already-kept detection is below `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64, max_detections: usize) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(rank_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        if kept.len() >= max_detections {
            break;
        }
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) < iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

pub fn detect(img: &RgbImage, model: &ModelHandle, cfg: &DetectorConfig) -> Result<Vec<Detection>> {
    let s = cfg.input_size as i64;
    let spec = &model.input_specs[0];
    if !spec.conforms(&[1, 3, s as usize, s as usize]) {
        return Err(Error::ShapeMismatch {
            name: spec.name.clone(),
            expected: spec.shape.clone(),
            actual: vec![1, 3, s as usize, s as usize],
        });
    }
    let (tensor, t) = preprocess(img, cfg)?;
    let outputs = model.forward_single(tensor.into_dyn())?;
    let head_name = &model.output_specs[0].name;
    let raw = outputs
        .get(head_name)
        .ok_or_else(|| Error::Backend(format!("missing output `{head_name}`")))?;
    let candidates = decode(raw, &t, cfg)?;
    Ok(nms(&candidates, cfg.nms_iou_threshold, cfg.max_detections))
}

/// Image files under `root` (or `root` itself if it is a file), sorted.
pub fn collect_images(root: &Path) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else if is_image(&p) {
                out.push(p);
            }
        }
        Ok(())
    }
    if !root.exists() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    if root.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut out = Vec::new();
    walk(root, &mut out)?;
    out.sort();
    Ok(out)
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Detections keyed by image identifier, in `det_id` order.
pub type DetectionTable = BTreeMap<String, Vec<Detection>>;

pub const DETECTIONS_HEADER: [&str; 7] = ["image", "det_id", "x1", "y1", "x2", "y2", "score"];

pub fn write_detections_csv(path: &Path, table: &DetectionTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(DETECTIONS_HEADER)?;
    for (image, dets) in table {
        for (i, d) in dets.iter().enumerate() {
            w.write_record([
                image.clone(),
                i.to_string(),
                format!("{:.6}", d.bbox.x1),
                format!("{:.6}", d.bbox.y1),
                format!("{:.6}", d.bbox.x2),
                format!("{:.6}", d.bbox.y2),
                format!("{:.6}", d.score),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_detections_csv(path: &Path) -> Result<DetectionTable> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.len() < 7 || headers.iter().take(7).ne(DETECTIONS_HEADER) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("expected header `{}`", DETECTIONS_HEADER.join(",")),
        });
    }
    let mut rows: BTreeMap<String, Vec<(usize, Detection)>> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: line + 2,
                msg: format!("bad number `{}` in column {}", &rec[i], DETECTIONS_HEADER[i]),
            })
        };
        let det_id = parse(1)? as usize;
        let bbox = BBox {
            x1: parse(2)?,
            y1: parse(3)?,
            x2: parse(4)?,
            y2: parse(5)?,
        };
        if bbox.x2 < bbox.x1 || bbox.y2 < bbox.y1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line + 2,
                msg: "inverted box".into(),
            });
        }
        rows.entry(rec[0].to_string())
            .or_default()
            .push((det_id, Detection::new(bbox, parse(6)?)));
    }
    Ok(rows
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by_key(|(id, _)| *id);
            (k, v.into_iter().map(|(_, d)| d).collect())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use ndarray::IxDyn;
    use proptest::prelude::*;

    fn det(x1: f64, y1: f64, x2: f64, y2: f64, score: f64) -> Detection {
        Detection::new(BBox::new(x1, y1, x2, y2), score)
    }

    fn head(anchors: &[[f32; 5]]) -> ArrayD<f32> {
        let mut a = ArrayD::zeros(IxDyn(&[1, 5, anchors.len()]));
        for (i, v) in anchors.iter().enumerate() {
            for c in 0..5 {
                a[[0, c, i]] = v[c];
            }
        }
        a
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::default().validate().is_ok());
        let bad = DetectorConfig { input_size: 100, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DetectorConfig { conf_threshold: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        assert_eq!(anchor_count(640), 8400);
    }

    #[test]
    fn preprocess_square_input_is_pure_rescale() {
        let cfg = DetectorConfig { input_size: 32, ..Default::default() };
        let img = RgbImage::from_fn(32, 32, |x, y| Rgb([x as u8 * 7, y as u8 * 3, 200]));
        let (t, lb) = preprocess(&img, &cfg).unwrap();
        assert_eq!((lb.scale, lb.pad_x, lb.pad_y), (1.0, 0.0, 0.0));
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(t[[0, 0, y, x]], (x as u8 * 7) as f32 / 255.0);
                assert_eq!(t[[0, 1, y, x]], (y as u8 * 3) as f32 / 255.0);
            }
        }
    }

    #[test]
    fn preprocess_wide_image_pads_rows() {
        let cfg = DetectorConfig::default();
        let img = RgbImage::new(1920, 1080);
        let (t, lb) = preprocess(&img, &cfg).unwrap();
        assert!((lb.scale - 1.0 / 3.0).abs() < 1e-12);
        assert!((lb.pad_y - 140.0).abs() < 1e-9);
        for y in [0usize, 139, 500, 639] {
            assert_eq!(t[[0, 1, y, 320]], PAD_VALUE, "row {y}");
        }
        for y in [140usize, 320, 499] {
            assert_eq!(t[[0, 1, y, 320]], 0.0, "row {y}");
        }
        assert!(preprocess(&RgbImage::new(0, 5), &cfg).is_err());
    }

    #[test]
    fn decode_examples() {
        let cfg = DetectorConfig::default();
        let ident = LetterboxTransform::new(640, 640, 640, 640).unwrap();
        let low = head(&[[10.0, 10.0, 5.0, 5.0, 0.1], [50.0, 50.0, 5.0, 5.0, 0.2]]);
        assert!(decode(&low, &ident, &cfg).unwrap().is_empty());

        let one = head(&[[320.0, 320.0, 64.0, 32.0, 0.9]]);
        let d = decode(&one, &ident, &cfg).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox, BBox::new(288.0, 304.0, 352.0, 336.0));
        assert!((d[0].score - 0.9).abs() < 1e-7);

        let wide = LetterboxTransform::new(1920, 1080, 640, 640).unwrap();
        let p = head(&[[320.0, 320.0, 3.0, 3.0, 0.9]]);
        let d = decode(&p, &wide, &cfg).unwrap();
        let cx = (d[0].bbox.x1 + d[0].bbox.x2) / 2.0;
        let cy = (d[0].bbox.y1 + d[0].bbox.y2) / 2.0;
        assert!((cx - 960.0).abs() < 1e-6 && (cy - 540.0).abs() < 1e-6);

        let bad = ArrayD::zeros(IxDyn(&[1, 6, 3]));
        assert!(decode(&bad, &ident, &cfg).is_err());
    }

    #[test]
    fn nms_examples() {
        let single = vec![det(0.0, 0.0, 10.0, 10.0, 0.3)];
        assert_eq!(nms(&single, 0.7, 300), single);

        // IoU 0.8: 10x10 box vs 10x8 box sharing the top edge
        let a = det(0.0, 0.0, 10.0, 10.0, 0.9);
        let b = det(0.0, 0.0, 10.0, 8.0, 0.8);
        assert!((iou(&a.bbox, &b.bbox) - 0.8).abs() < 1e-12);
        assert_eq!(nms(&[b, a], 0.7, 300), vec![a]);

        let c = det(100.0, 100.0, 110.0, 110.0, 0.1);
        assert_eq!(nms(&[c, a], 0.7, 300), vec![a, c]);
    }

    #[test]
    fn nms_truncates_and_tie_breaks() {
        let dets: Vec<_> = (0..10)
            .map(|i| det(i as f64 * 20.0, 0.0, i as f64 * 20.0 + 10.0, 10.0, 0.5))
            .rev()
            .collect();
        let kept = nms(&dets, 0.7, 3);
        assert_eq!(kept.len(), 3);
        assert_eq!(kept[0].bbox.x1, 0.0);
        assert_eq!(kept[2].bbox.x1, 40.0);
    }

    #[test]
    fn detect_with_stub_is_deterministic() {
        let cfg = DetectorConfig { input_size: 64, ..Default::default() };
        let model = stub_detector(64, 11).unwrap();
        let img = RgbImage::from_fn(80, 48, |x, y| Rgb([x as u8, y as u8, 30]));
        let a = detect(&img, &model, &cfg).unwrap();
        let b = detect(&img, &model, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        for d in &a {
            assert!(d.bbox.x1 >= 0.0 && d.bbox.x2 <= 80.0 && d.bbox.y2 <= 48.0);
        }
        let strict = DetectorConfig { conf_threshold: 1.0, ..cfg.clone() };
        assert!(detect(&img, &model, &strict).unwrap().is_empty());
        let wrong = DetectorConfig { input_size: 96, ..cfg };
        assert!(detect(&img, &model, &wrong).is_err());
    }

    #[test]
    fn detections_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut table = DetectionTable::new();
        table.insert("a/b.png".into(), vec![det(1.0, 2.0, 3.5, 4.25, 0.5), det(0.0, 0.0, 1.0, 1.0, 0.25)]);
        table.insert("c.jpg".into(), vec![]);
        write_detections_csv(&path, &table).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("image,det_id,x1,y1,x2,y2,score\na/b.png,0,1.000000,2.000000,3.500000,4.250000,0.500000\n"));
        let back = read_detections_csv(&path).unwrap();
        assert_eq!(back["a/b.png"], table["a/b.png"]);
    }

    fn arb_dets(max: usize) -> impl Strategy<Value = Vec<Detection>> {
        prop::collection::vec(
            (0.0..50.0f64, 0.0..50.0f64, 1.0..30.0f64, 1.0..30.0f64, 0.0..1.0f64),
            1..=max,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h, s)| det(x, y, x + w, y + h, s))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn nms_output_is_antichain(dets in arb_dets(40), thr in 0.05..0.95f64) {
            let kept = nms(&dets, thr, 300);
            for i in 0..kept.len() {
                for j in i + 1..kept.len() {
                    prop_assert!(iou(&kept[i].bbox, &kept[j].bbox) < thr);
                }
                if i > 0 {
                    prop_assert!(kept[i - 1].score >= kept[i].score);
                }
            }
        }

        #[test]
        fn raising_confidence_never_adds(dets in arb_dets(30), lo in 0.0..0.5f64, delta in 0.0..0.5f64) {
            let t = LetterboxTransform::new(100, 100, 100, 100).unwrap();
            let raw = head(&dets.iter().map(|d| {
                let b = d.bbox;
                [((b.x1 + b.x2) / 2.0) as f32, ((b.y1 + b.y2) / 2.0) as f32,
                 b.width() as f32, b.height() as f32, d.score as f32]
            }).collect::<Vec<_>>());
            let cfg_lo = DetectorConfig { conf_threshold: lo, ..Default::default() };
            let cfg_hi = DetectorConfig { conf_threshold: lo + delta, ..Default::default() };
            let a = decode(&raw, &t, &cfg_lo).unwrap();
            let b = decode(&raw, &t, &cfg_hi).unwrap();
            prop_assert!(b.len() <= a.len());
            for d in &b {
                prop_assert!(a.contains(d));
            }
        }

        #[test]
        fn planted_box_round_trips(
            sw in 16u32..2000, sh in 16u32..2000,
            fx in 0.1..0.9f64, fy in 0.1..0.9f64, fw in 0.01..0.1f64, fh in 0.01..0.1f64,
        ) {
            let cfg = DetectorConfig::default();
            let t = LetterboxTransform::new(sw, sh, cfg.input_size, cfg.input_size).unwrap();
            let src = BBox::from_cxcywh(fx * sw as f64, fy * sh as f64, fw * sw as f64, fh * sh as f64);
            let lb = t.map(&src);
            let raw = head(&[[((lb.x1 + lb.x2) / 2.0) as f32, ((lb.y1 + lb.y2) / 2.0) as f32,
                              lb.width() as f32, lb.height() as f32, 0.9]]);
            let d = decode(&raw, &t, &cfg).unwrap();
            prop_assert_eq!(d.len(), 1);
            let b = d[0].bbox;
            for (got, want) in [(b.x1, src.x1), (b.y1, src.y1), (b.x2, src.x2), (b.y2, src.y2)] {
                prop_assert!((got - want).abs() < 1.0, "{} vs {}", got, want);
            }
        }
    }
}
