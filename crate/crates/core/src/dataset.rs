// SPDX-License-Identifier: Apache-2.0

//! Dataset ingestion: YOLO label files, the frame manifest, the test split,
//! detection-to-billboard association and per-group frame selection.
//!
//! Expected layout under a dataset root:
//!
//! ```text
//! images/<frame>          PNG or JPEG; <frame> may contain subdirectories
//! labels/<frame>.txt      YOLO boxes, same stem as the image
//! manifest.csv            frame,billboard_id,driver_id,gaze_class,split
//! ```
//!
//! The i-th manifest row for a frame (in file order) owns the i-th line of
//! that frame's label file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::match_detections;
use crate::geometry::{BBox, Detection, GazeClass, NormBBox};

pub const MANIFEST_HEADER: [&str; 5] = ["frame", "billboard_id", "driver_id", "gaze_class", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            o => Err(Error::invalid(format!("unknown split `{o}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoloBox {
    pub class_id: u32,
    pub bbox: NormBBox,
}

/// Parse YOLO label text (`class cx cy w h` per line). Blank lines are ignored.
pub fn parse_yolo_str(text: &str, path: &Path) -> Result<Vec<YoloBox>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.into(),
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 5 {
            return Err(err(&format!("expected 5 columns, found {}", cols.len())));
        }
        let class_id: u32 = cols[0].parse().map_err(|_| err("bad class id"))?;
        if class_id != 0 {
            return Err(err("class id must be 0"));
        }
        let mut v = [0.0; 4];
        for (slot, s) in v.iter_mut().zip(&cols[1..]) {
            *slot = s.parse().map_err(|_| err("bad number"))?;
        }
        let [cx, cy, w, h] = v;
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(unit(cx) && unit(cy) && unit(w) && unit(h)) || w == 0.0 || h == 0.0 {
            return Err(err("value out of range"));
        }
        out.push(YoloBox {
            class_id,
            bbox: NormBBox { cx, cy, w, h },
        });
    }
    Ok(out)
}

/// Parse a YOLO label file; an empty file is a negative image.
pub fn parse_yolo_labels(path: &Path) -> Result<Vec<YoloBox>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_yolo_str(&fs::read_to_string(path)?, path)
}

/// Label file path for a frame: `labels/<frame stem>.txt`.
pub fn label_path(root: &Path, frame: &str) -> PathBuf {
    root.join("labels").join(Path::new(frame).with_extension("txt"))
}

pub fn image_path(root: &Path, frame: &str) -> PathBuf {
    root.join("images").join(frame)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// Frame path relative to `images/`, `/`-separated.
    pub frame: String,
    pub billboard_id: String,
    pub driver_id: String,
    pub gaze_label: GazeClass,
    pub gt_box: Option<NormBBox>,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ManifestCounts {
    pub records: usize,
    pub frames: usize,
    pub train_billboards: usize,
    pub test_billboards: usize,
    pub drivers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Sorted by `(frame, billboard_id)`.
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn counts(&self) -> ManifestCounts {
        let ids = |s: Split| {
            self.records
                .iter()
                .filter(|r| r.split == s)
                .map(|r| &r.billboard_id)
                .collect::<BTreeSet<_>>()
                .len()
        };
        ManifestCounts {
            records: self.records.len(),
            frames: self.records.iter().map(|r| &r.frame).collect::<BTreeSet<_>>().len(),
            train_billboards: ids(Split::Train),
            test_billboards: ids(Split::Test),
            drivers: self.records.iter().map(|r| &r.driver_id).collect::<BTreeSet<_>>().len(),
        }
    }

    pub fn frames(&self, split: Option<Split>) -> Vec<&str> {
        self.records
            .iter()
            .filter(|r| split.is_none_or(|s| r.split == s))
            .map(|r| r.frame.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Truth per `frame#billboard_id` sample id.
    pub fn sample_labels(&self) -> BTreeMap<String, GazeClass> {
        self.records
            .iter()
            .map(|r| (crate::features::sample_id(&r.frame, &r.billboard_id), r.gaze_label))
            .collect()
    }

    /// One label per billboard; fails if a billboard carries two labels.
    pub fn billboard_labels(&self) -> Result<BTreeMap<String, GazeClass>> {
        let mut out: BTreeMap<String, GazeClass> = BTreeMap::new();
        for r in &self.records {
            match out.get(&r.billboard_id) {
                Some(&l) if l != r.gaze_label => {
                    return Err(Error::invalid(format!(
                        "billboard `{}` has conflicting gaze labels {l} and {}",
                        r.billboard_id, r.gaze_label
                    )))
                }
                _ => {
                    out.insert(r.billboard_id.clone(), r.gaze_label);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub frame: String,
    pub billboard_id: String,
    pub driver_id: String,
    pub gaze_class: GazeClass,
    pub split: Split,
}

/// Read a manifest CSV. Lines starting with `#` are comments.
pub fn read_manifest_csv(path: &Path) -> Result<Vec<ManifestRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(MANIFEST_HEADER) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let perr = |e: Error| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        };
        let gaze_class = rec[3].trim().parse::<GazeClass>().map_err(perr)?;
        let split = rec[4].parse::<Split>().map_err(perr)?;
        rows.push(ManifestRow {
            frame: rec[0].trim().to_string(),
            billboard_id: rec[1].trim().to_string(),
            driver_id: rec[2].trim().to_string(),
            gaze_class,
            split,
        });
    }
    Ok(rows)
}

/// Write records as a manifest CSV headed by a `# validated=1` line.
pub fn write_manifest_csv(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# validated=1")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(MANIFEST_HEADER)?;
    for r in records {
        w.write_record([
            r.frame.as_str(),
            &r.billboard_id,
            &r.driver_id,
            &r.gaze_label.index().to_string(),
            &r.split.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Test billboard ids, one per line; `#` starts a comment.
pub fn read_split_file(path: &Path) -> Result<BTreeSet<String>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Validate and join the manifest, label files and test split under `root`.
pub fn build_manifest(root: &Path, split_file: &Path) -> Result<Manifest> {
    let rows = read_manifest_csv(&root.join("manifest.csv"))?;
    let test_ids = read_split_file(split_file)?;
    let known: BTreeSet<&str> = rows.iter().map(|r| r.billboard_id.as_str()).collect();
    if let Some(bad) = test_ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(Error::invalid(format!(
            "split file names unknown billboard `{bad}`"
        )));
    }

    let mut by_frame: BTreeMap<&str, Vec<&ManifestRow>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut split_of: BTreeMap<&str, Split> = BTreeMap::new();
    for r in &rows {
        if !seen.insert((r.frame.as_str(), r.billboard_id.as_str())) {
            return Err(Error::invalid(format!(
                "duplicate manifest entry for frame `{}` billboard `{}`",
                r.frame, r.billboard_id
            )));
        }
        let want = if test_ids.contains(&r.billboard_id) { Split::Test } else { Split::Train };
        if r.split != want {
            return Err(Error::invalid(format!(
                "billboard `{}` is `{}` in the manifest but `{want}` per the split file",
                r.billboard_id, r.split
            )));
        }
        if *split_of.entry(&r.billboard_id).or_insert(r.split) != r.split {
            return Err(Error::invalid(format!("billboard `{}` appears in both splits", r.billboard_id)));
        }
        by_frame.entry(&r.frame).or_default().push(r);
    }

    let mut records = Vec::with_capacity(rows.len());
    for (frame, frows) in by_frame {
        let img = image_path(root, frame);
        if !img.is_file() {
            return Err(Error::MissingFile(img));
        }
        let lp = label_path(root, frame);
        let boxes = if lp.exists() { Some(parse_yolo_labels(&lp)?) } else { None };
        if let Some(b) = &boxes {
            if b.len() != frows.len() {
                return Err(Error::invalid(format!(
                    "label/metadata disagreement for `{frame}`: {} boxes but {} manifest rows",
                    b.len(),
                    frows.len()
                )));
            }
        }
        for (i, r) in frows.into_iter().enumerate() {
            records.push(SampleRecord {
                frame: r.frame.clone(),
                billboard_id: r.billboard_id.clone(),
                driver_id: r.driver_id.clone(),
                gaze_label: r.gaze_class,
                gt_box: boxes.as_ref().map(|b| b[i].bbox),
                split: r.split,
            });
        }
    }
    records.sort_by(|a, b| (&a.frame, &a.billboard_id).cmp(&(&b.frame, &b.billboard_id)));
    Ok(Manifest { records })
}

/// Greedy one-to-one association of detections with labelled GT boxes at
/// IoU >= `iou_min`. Unmatched detections are dropped. Output follows
/// detection rank order.
pub fn associate<'a>(dets: &[Detection], gts: &'a [(BBox, String)], iou_min: f64) -> Vec<(Detection, &'a str)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let boxes: Vec<BBox> = gts.iter().map(|(b, _)| *b).collect();
    let m = match_detections(dets, &boxes, iou_min);
    order
        .into_iter()
        .zip(m.outcomes)
        .filter_map(|(i, (_, g))| g.map(|g| (dets[i], gts[g].1.as_str())))
        .collect()
}

/// A detection tied to a billboard instance in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociatedDetection {
    pub frame: String,
    pub billboard_id: String,
    pub driver_id: String,
    pub label: GazeClass,
    pub split: Split,
    pub detection: Detection,
    pub img_w: u32,
    pub img_h: u32,
}

/// Associate every frame's detections with its manifest records.
/// Frames without GT boxes contribute nothing.
pub fn associate_manifest(
    root: &Path,
    manifest: &Manifest,
    detections: &BTreeMap<String, Vec<Detection>>,
    iou_min: f64,
) -> Result<Vec<AssociatedDetection>> {
    let mut by_frame: BTreeMap<&str, Vec<&SampleRecord>> = BTreeMap::new();
    for r in &manifest.records {
        by_frame.entry(&r.frame).or_default().push(r);
    }
    let mut out = Vec::new();
    for (frame, recs) in by_frame {
        let Some(dets) = detections.get(frame) else { continue };
        if recs.iter().all(|r| r.gt_box.is_none()) {
            continue;
        }
        let (w, h) = image::image_dimensions(image_path(root, frame))?;
        let gts: Vec<(BBox, String)> = recs
            .iter()
            .filter_map(|r| r.gt_box.map(|g| (g.to_bbox(w as f64, h as f64), r.billboard_id.clone())))
            .collect();
        let by_id: BTreeMap<&str, &SampleRecord> = recs.iter().map(|r| (r.billboard_id.as_str(), *r)).collect();
        for (det, id) in associate(dets, &gts, iou_min) {
            let r = by_id[id];
            out.push(AssociatedDetection {
                frame: frame.to_string(),
                billboard_id: r.billboard_id.clone(),
                driver_id: r.driver_id.clone(),
                label: r.gaze_label,
                split: r.split,
                detection: det,
                img_w: w,
                img_h: h,
            });
        }
    }
    out.sort_by(|a, b| (&a.frame, &a.billboard_id).cmp(&(&b.frame, &b.billboard_id)));
    Ok(out)
}

/// Keep, per `(billboard_id, driver_id)`, the `n` detections with the largest
/// pixel area; equal areas fall back to frame path order. Output is sorted
/// by `(frame, billboard_id)`.
pub fn select_top_frames(items: Vec<AssociatedDetection>, n: usize) -> Vec<AssociatedDetection> {
    let mut groups: BTreeMap<(String, String), Vec<AssociatedDetection>> = BTreeMap::new();
    for it in items {
        groups
            .entry((it.billboard_id.clone(), it.driver_id.clone()))
            .or_default()
            .push(it);
    }
    let mut out: Vec<AssociatedDetection> = groups
        .into_values()
        .flat_map(|mut g| {
            g.sort_by(|a, b| {
                b.detection
                    .bbox
                    .area()
                    .total_cmp(&a.detection.bbox.area())
                    .then_with(|| a.frame.cmp(&b.frame))
            });
            g.truncate(n);
            g
        })
        .collect();
    out.sort_by(|a, b| (&a.frame, &a.billboard_id).cmp(&(&b.frame, &b.billboard_id)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> PathBuf {
        PathBuf::from("x.txt")
    }

    #[test]
    fn yolo_examples() {
        let b = parse_yolo_str("0 0.5 0.5 1 1\n", &p()).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].bbox.to_bbox(10.0, 10.0), BBox::new(0.0, 0.0, 10.0, 10.0));
        assert!(parse_yolo_str("", &p()).unwrap().is_empty());
        let e = parse_yolo_str("0 0.5 0.5 1.5 1", &p()).unwrap_err();
        assert_eq!(e.to_string(), "x.txt: value out of range, line 1");
        let e = parse_yolo_str("0 0.5 0.5 1\n", &p()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        assert!(parse_yolo_str("0 0.5 0.5 0.1 0.1\n1 0.5 0.5 0.1 0.1", &p()).is_err());
    }

    fn bb(x: f64) -> BBox {
        BBox::new(x, 0.0, x + 10.0, 10.0)
    }

    #[test]
    fn association_examples() {
        let gts = vec![(bb(0.0), "a".to_string()), (bb(4.0), "b".to_string())];
        // 0.5 px off `a`: IoU 0.905
        let d = Detection::new(bb(0.5), 0.9);
        assert_eq!(associate(&[d], &gts[..1], 0.5)[0].1, "a");
        // IoU 7/13 with `a`, 9/11 with `b`
        let d = Detection::new(bb(3.0), 0.9);
        assert_eq!(associate(&[d], &gts, 0.5)[0].1, "b");
        // no overlap: dropped
        let far = Detection::new(bb(30.0), 0.9);
        assert!(associate(&[far], &gts, 0.5).is_empty());
        // one GT cannot take two detections
        let two = [Detection::new(bb(0.0), 0.9), Detection::new(bb(0.2), 0.8)];
        assert_eq!(associate(&two, &gts[..1], 0.5).len(), 1);
    }

    fn item(frame: &str, bb_id: &str, w: f64) -> AssociatedDetection {
        AssociatedDetection {
            frame: frame.into(),
            billboard_id: bb_id.into(),
            driver_id: "d".into(),
            label: GazeClass::None,
            split: Split::Train,
            detection: Detection::new(BBox::new(0.0, 0.0, w, 1.0), 0.5),
            img_w: 100,
            img_h: 100,
        }
    }

    #[test]
    fn top_frames_examples() {
        let small: Vec<_> = (0..3).map(|i| item(&format!("f{i}"), "a", 1.0)).collect();
        assert_eq!(select_top_frames(small, 10).len(), 3);

        let big: Vec<_> = (0..15).map(|i| item(&format!("f{i:02}"), "a", i as f64 + 1.0)).collect();
        let kept = select_top_frames(big, 10);
        assert_eq!(kept.len(), 10);
        assert!(kept.iter().all(|k| k.detection.bbox.area() >= 6.0));

        let tied: Vec<_> = ["c", "a", "b"].iter().map(|f| item(f, "a", 2.0)).collect();
        let kept = select_top_frames(tied, 2);
        let frames: Vec<&str> = kept.iter().map(|k| k.frame.as_str()).collect();
        assert_eq!(frames, ["a", "b"]);
    }

    #[test]
    fn split_parse() {
        assert_eq!("test".parse::<Split>().unwrap(), Split::Test);
        assert!("val".parse::<Split>().is_err());
    }
}
