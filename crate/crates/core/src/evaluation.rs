// SPDX-License-Identifier: Apache-2.0

//! Detection metrics (P/R, 101-point AP, mAP@50 and mAP@50-95) and
//! classification metrics (accuracy, F1 variants, confusion matrix).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, Detection, GazeClass};

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Greedy matching result for one image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageMatch {
    /// `(score, matched GT index)` in ranking order; `None` is a false positive.
    pub outcomes: Vec<(f64, Option<usize>)>,
    pub unmatched_gt: usize,
}

impl ImageMatch {
    pub fn tp(&self) -> usize {
        self.outcomes.iter().filter(|(_, g)| g.is_some()).count()
    }
}

/// Rank detections by score (stable, so ties keep insertion order), then give
/// each the highest-IoU GT still free with IoU >= `iou_thr`.
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_thr: f64) -> ImageMatch {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut taken = vec![false; gts.len()];
    let outcomes = order
        .into_iter()
        .map(|i| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let v = iou(&dets[i].bbox, gt);
                if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            (dets[i].score, best.map(|(g, _)| g))
        })
        .collect();
    ImageMatch {
        outcomes,
        unmatched_gt: taken.iter().filter(|t| !**t).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

fn ranked(scored: &[(f64, bool)]) -> Vec<(f64, bool)> {
    let mut s = scored.to_vec();
    s.sort_by(|a, b| b.0.total_cmp(&a.0));
    s
}

/// Cumulative precision/recall after each ranked detection.
pub fn pr_curve(scored: &[(f64, bool)], total_gt: usize) -> Vec<PrPoint> {
    let (mut tp, mut fp) = (0usize, 0usize);
    ranked(scored)
        .into_iter()
        .map(|(s, hit)| {
            if hit {
                tp += 1;
            } else {
                fp += 1;
            }
            PrPoint {
                threshold: s,
                precision: tp as f64 / (tp + fp) as f64,
                recall: if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 },
            }
        })
        .collect()
}

/// 101-point interpolated AP over `(score, is_tp)` pairs pooled across images.
pub fn average_precision(scored: &[(f64, bool)], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return if scored.is_empty() { 1.0 } else { 0.0 };
    }
    let curve = pr_curve(scored, total_gt);
    // precision envelope: max precision at any later point
    let mut env: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut sum = 0.0;
    let mut j = 0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        while j < curve.len() && curve[j].recall < r {
            j += 1;
        }
        if j < curve.len() {
            sum += env[j];
        }
    }
    sum / 101.0
}

/// Mean of per-threshold APs.
pub fn map_range(aps: &[f64]) -> f64 {
    if aps.is_empty() {
        return 0.0;
    }
    aps.iter().sum::<f64>() / aps.len() as f64
}

/// Precision and recall at the F1-maximizing confidence threshold.
/// Only cut points between distinct scores are considered; ties keep the
/// higher threshold.
pub fn best_f1_point(scored: &[(f64, bool)], total_gt: usize) -> PrPoint {
    let curve = pr_curve(scored, total_gt);
    if curve.is_empty() {
        let v = if total_gt == 0 { 1.0 } else { 0.0 };
        return PrPoint {
            threshold: 1.0,
            precision: v,
            recall: v,
        };
    }
    let f1 = |p: &PrPoint| {
        if p.precision + p.recall > 0.0 {
            2.0 * p.precision * p.recall / (p.precision + p.recall)
        } else {
            0.0
        }
    };
    let mut best: Option<PrPoint> = None;
    for (i, p) in curve.iter().enumerate() {
        let cut = curve.get(i + 1).is_none_or(|n| n.threshold != p.threshold);
        if cut && best.as_ref().is_none_or(|b| f1(p) > f1(b)) {
            best = Some(*p);
        }
    }
    best.expect("non-empty curve")
}

/// Which IoU the reported precision/recall use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IouSpec {
    Single(f64),
    /// Averaged over 0.50:0.05:0.95.
    Range,
}

impl FromStr for IouSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "range" {
            return Ok(IouSpec::Range);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v <= 1.0 => Ok(IouSpec::Single(v)),
            _ => Err(Error::Config(format!("--iou expects a value in (0, 1] or `range`, got `{s}`"))),
        }
    }
}

impl fmt::Display for IouSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IouSpec::Single(v) => write!(f, "{v}"),
            IouSpec::Range => f.write_str("range"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetEvalReport {
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map50_95: f64,
    /// AP per threshold in [`iou_thresholds`] order.
    pub aps: [f64; 10],
    /// Matches at IoU 0.5 per image.
    pub per_image: BTreeMap<String, ImageMatch>,
}

impl DetEvalReport {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "precision": self.precision,
            "recall": self.recall,
            "map50": self.map50,
            "map50_95": self.map50_95,
        })
    }
}

fn pooled(
    preds: &BTreeMap<String, Vec<Detection>>,
    gts: &BTreeMap<String, Vec<BBox>>,
    thr: f64,
) -> (Vec<(f64, bool)>, usize, BTreeMap<String, ImageMatch>) {
    let mut scored = Vec::new();
    let mut total = 0;
    let mut per_image = BTreeMap::new();
    let images: std::collections::BTreeSet<&String> = preds.keys().chain(gts.keys()).collect();
    for img in images {
        let d = preds.get(img).map(Vec::as_slice).unwrap_or(&[]);
        let g = gts.get(img).map(Vec::as_slice).unwrap_or(&[]);
        let m = match_detections(d, g, thr);
        total += g.len();
        scored.extend(m.outcomes.iter().map(|(s, hit)| (*s, hit.is_some())));
        per_image.insert(img.clone(), m);
    }
    (scored, total, per_image)
}

/// Dataset-level detection metrics. Images absent from `gts` have no GT.
pub fn evaluate_detections(
    preds: &BTreeMap<String, Vec<Detection>>,
    gts: &BTreeMap<String, Vec<BBox>>,
    iou_spec: IouSpec,
) -> DetEvalReport {
    let thresholds = iou_thresholds();
    let mut aps = [0.0; 10];
    let mut prs = Vec::new();
    let mut per_image = BTreeMap::new();
    for (i, &t) in thresholds.iter().enumerate() {
        let (scored, total, m) = pooled(preds, gts, t);
        aps[i] = average_precision(&scored, total);
        if i == 0 {
            per_image = m;
        }
        if iou_spec == IouSpec::Range {
            prs.push(best_f1_point(&scored, total));
        }
    }
    if let IouSpec::Single(t) = iou_spec {
        let (scored, total, _) = pooled(preds, gts, t);
        prs.push(best_f1_point(&scored, total));
    }
    let n = prs.len() as f64;
    DetEvalReport {
        precision: prs.iter().map(|p| p.precision).sum::<f64>() / n,
        recall: prs.iter().map(|p| p.recall).sum::<f64>() / n,
        map50: aps[0],
        map50_95: map_range(&aps),
        aps,
        per_image,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClsEvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub weighted_f1: f64,
    /// `confusion[true][pred]`.
    pub confusion: [[usize; 3]; 3],
}

impl ClsEvalReport {
    pub fn per_class_f1(&self) -> [f64; 3] {
        std::array::from_fn(|c| class_f1(&self.confusion, c))
    }

    pub fn support(&self) -> [usize; 3] {
        std::array::from_fn(|c| self.confusion[c].iter().sum())
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "weighted_f1": self.weighted_f1,
            "confusion": self.confusion,
        })
    }
}

fn class_f1(cm: &[[usize; 3]; 3], c: usize) -> f64 {
    let tp = cm[c][c];
    let fp: usize = (0..3).map(|t| cm[t][c]).sum::<usize>() - tp;
    let fn_: usize = cm[c].iter().sum::<usize>() - tp;
    let den = 2 * tp + fp + fn_;
    if den == 0 {
        0.0
    } else {
        (2 * tp) as f64 / den as f64
    }
}

pub fn confusion(y_true: &[GazeClass], y_pred: &[GazeClass]) -> [[usize; 3]; 3] {
    let mut cm = [[0; 3]; 3];
    for (t, p) in y_true.iter().zip(y_pred) {
        cm[t.index()][p.index()] += 1;
    }
    cm
}

/// Unweighted mean of the three per-class F1 scores (absent classes count 0).
pub fn macro_f1(y_true: &[GazeClass], y_pred: &[GazeClass]) -> f64 {
    let cm = confusion(y_true, y_pred);
    (0..3).map(|c| class_f1(&cm, c)).sum::<f64>() / 3.0
}

pub fn classification_report(y_true: &[GazeClass], y_pred: &[GazeClass]) -> Result<ClsEvalReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::invalid(format!(
            "{} truth labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let cm = confusion(y_true, y_pred);
    let n = y_true.len();
    let correct: usize = (0..3).map(|c| cm[c][c]).sum();
    let f1: [f64; 3] = std::array::from_fn(|c| class_f1(&cm, c));
    let support: [usize; 3] = std::array::from_fn(|c| cm[c].iter().sum());
    // pooled: TP = correct, FP = FN = n - correct
    let wrong = n - correct;
    Ok(ClsEvalReport {
        accuracy: correct as f64 / n as f64,
        macro_f1: f1.iter().sum::<f64>() / 3.0,
        micro_f1: (2 * correct) as f64 / (2 * correct + 2 * wrong) as f64,
        weighted_f1: (0..3).map(|c| f1[c] * support[c] as f64).sum::<f64>() / n as f64,
        confusion: cm,
    })
}
