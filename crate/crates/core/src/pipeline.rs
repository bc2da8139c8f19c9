// SPDX-License-Identifier: Apache-2.0

//! End-to-end orchestration: detection over a dataset, association, frame
//! selection, embedding, PCA, tuning, prediction, voting and evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backend::ModelHandle;
use crate::classifier::{
    aggregate, bundle_summary, cv_tune, write_bundle, CvPlan, CvReport, EnsembleModel, SearchSpace, TrainSet,
};
use crate::config::PipelineConfig;
use crate::dataset::{self, AssociatedDetection, Manifest, Split};
use crate::detector::{self, DetectionTable, DetectorConfig};
use crate::error::{Error, Result};
use crate::evaluation::{classification_report, ClsEvalReport};
use crate::features::{
    self, assemble, crop_for_embedding, embed, pca_fit, Embedding, EmbeddingSource, FeatureInputs, FeatureRow,
    FeatureSpec, PcaTransform,
};
use crate::geometry::{to_norm, Detection, GazeClass, NormBBox};
use crate::imaging::load_rgb;
use crate::parallel;

/// `/`-joined path of `p` relative to `base`, or the file name.
pub fn image_key(p: &Path, base: &Path) -> String {
    let rel = p.strip_prefix(base).ok().filter(|r| !r.as_os_str().is_empty());
    let rel = rel.unwrap_or_else(|| Path::new(p.file_name().unwrap_or(p.as_os_str())));
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Run the detector over image files, keyed by [`image_key`] against `base`.
pub fn detect_images(
    paths: &[PathBuf],
    base: &Path,
    model: &ModelHandle,
    cfg: &DetectorConfig,
    jobs: usize,
) -> Result<DetectionTable> {
    let dets = parallel::try_map(paths, jobs, |p| detector::detect(&load_rgb(p)?, model, cfg))?;
    Ok(paths.iter().map(|p| image_key(p, base)).zip(dets).collect())
}

/// One selected detection with its raw (pre-PCA) inputs.
#[derive(Debug, Clone)]
pub struct RawSample {
    pub frame: String,
    pub billboard_id: String,
    pub driver_id: String,
    pub label: GazeClass,
    pub split: Split,
    pub detection: Detection,
    pub nbox: NormBBox,
    pub full: Embedding,
    pub crop: Embedding,
}

impl RawSample {
    pub fn sample_id(&self) -> String {
        features::sample_id(&self.frame, &self.billboard_id)
    }
}

/// Full-frame and crop embeddings for each detection of one image.
pub fn embed_detections(img: &RgbImage, dets: &[Detection], embedder: &ModelHandle) -> Result<(Embedding, Vec<Embedding>)> {
    let full = embed(img, embedder, EmbeddingSource::Full)?;
    let crops = dets
        .iter()
        .map(|d| embed(&crop_for_embedding(img, &d.bbox)?, embedder, EmbeddingSource::Crop))
        .collect::<Result<_>>()?;
    Ok((full, crops))
}

/// Embed the selected detections, one image load and full-frame pass per frame.
pub fn embed_samples(
    root: &Path,
    selected: &[AssociatedDetection],
    embedder: &ModelHandle,
    jobs: usize,
) -> Result<Vec<RawSample>> {
    let mut by_frame: BTreeMap<&str, Vec<&AssociatedDetection>> = BTreeMap::new();
    for s in selected {
        by_frame.entry(&s.frame).or_default().push(s);
    }
    let groups: Vec<(&str, Vec<&AssociatedDetection>)> = by_frame.into_iter().collect();
    let per_frame = parallel::try_map(&groups, jobs, |(frame, items)| {
        let img = load_rgb(&dataset::image_path(root, frame))?;
        let dets: Vec<Detection> = items.iter().map(|a| a.detection).collect();
        let (full, crops) = embed_detections(&img, &dets, embedder)?;
        items
            .iter()
            .zip(crops)
            .map(|(a, crop)| {
                Ok(RawSample {
                    frame: a.frame.clone(),
                    billboard_id: a.billboard_id.clone(),
                    driver_id: a.driver_id.clone(),
                    label: a.label,
                    split: a.split,
                    detection: a.detection,
                    nbox: to_norm(&a.detection.bbox, a.img_w as f64, a.img_h as f64)?,
                    full: full.clone(),
                    crop,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(per_frame.into_iter().flatten().collect())
}

/// PCA bases for both embedding families, stored next to a features file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSidecar {
    pub pca_k: usize,
    pub pca_full: PcaTransform,
    pub pca_crop: PcaTransform,
}

impl PcaSidecar {
    pub fn fit(train: &[RawSample], k: usize) -> Result<Self> {
        let full: Vec<Vec<f64>> = train.iter().map(|s| s.full.as_f64()).collect();
        let crop: Vec<Vec<f64>> = train.iter().map(|s| s.crop.as_f64()).collect();
        Ok(Self {
            pca_k: k,
            pca_full: pca_fit(&full, k)?,
            pca_crop: pca_fit(&crop, k)?,
        })
    }

    pub fn path_for(features: &Path) -> PathBuf {
        let mut s = features.as_os_str().to_owned();
        s.push(".pca.json");
        PathBuf::from(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn source_spec(&self) -> FeatureSpec {
        FeatureSpec::all(self.pca_k)
    }
}

/// Full-layout (`B | Ifull | Icrop`) feature rows.
pub fn feature_rows(samples: &[RawSample], pcas: &PcaSidecar) -> Result<Vec<FeatureRow>> {
    let spec = pcas.source_spec();
    samples
        .iter()
        .map(|s| {
            let vector = assemble(
                &spec,
                &FeatureInputs {
                    bbox: Some(&s.nbox),
                    pca_full: Some(&pcas.pca_full),
                    pca_crop: Some(&pcas.pca_crop),
                    full: Some(&s.full),
                    crop: Some(&s.crop),
                },
            )?;
            Ok(FeatureRow {
                sample_id: s.sample_id(),
                billboard_id: s.billboard_id.clone(),
                driver_id: s.driver_id.clone(),
                vector,
                label: Some(s.label),
            })
        })
        .collect()
}

/// Infer the full-layout spec from a feature width `4 + 2k`.
pub fn spec_from_width(d: usize) -> Result<FeatureSpec> {
    if d < 6 || !(d - 4).is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "feature width {d} is not 4 + 2k; pass the matching PCA sidecar"
        )));
    }
    Ok(FeatureSpec::all((d - 4) / 2))
}

/// Keep the columns of `target` from rows laid out by `source`.
pub fn select_columns(rows: &[FeatureRow], source: &FeatureSpec, target: &FeatureSpec) -> Result<Vec<FeatureRow>> {
    let cols = target.columns_within(source)?;
    rows.iter()
        .map(|r| {
            if r.vector.len() != source.dim() {
                return Err(Error::DimensionMismatch {
                    expected: source.dim(),
                    actual: r.vector.len(),
                });
            }
            Ok(FeatureRow {
                vector: cols.iter().map(|&c| r.vector[c]).collect(),
                ..r.clone()
            })
        })
        .collect()
}

/// Tune and refit the ensemble on labelled full-layout rows.
#[allow(clippy::too_many_arguments)]
pub fn train_model(
    rows: &[FeatureRow],
    source: &FeatureSpec,
    target: &FeatureSpec,
    folds: usize,
    seed: u64,
    search: &SearchSpace,
    pcas: Option<&PcaSidecar>,
    jobs: usize,
) -> Result<(EnsembleModel, CvReport)> {
    let selected = select_columns(rows, source, target)?;
    let mut x = Vec::with_capacity(selected.len());
    let mut y = Vec::with_capacity(selected.len());
    let mut groups = Vec::with_capacity(selected.len());
    for r in selected {
        let label = r
            .label
            .ok_or_else(|| Error::invalid(format!("training row `{}` has no label", r.sample_id)))?;
        x.push(r.vector);
        y.push(label);
        groups.push(r.billboard_id);
    }
    let data = TrainSet::new(x, y)?;
    let plan = CvPlan::new(groups.iter().map(String::as_str), folds, seed)?;
    let (mut model, report) = cv_tune(&data, &groups, &plan, search, *target, jobs)?;
    if target.use_ifull || target.use_icrop {
        let p = pcas.ok_or_else(|| Error::invalid("embedding features need the PCA sidecar"))?;
        if target.use_ifull {
            model.pca_full = Some(p.pca_full.truncated(target.pca_k)?);
        }
        if target.use_icrop {
            model.pca_crop = Some(p.pca_crop.truncated(target.pca_k)?);
        }
    }
    Ok((model, report))
}

/// Bundle plus its `<path>.json` summary.
pub fn save_model(path: &Path, model: &EnsembleModel, report: Option<&CvReport>) -> Result<PathBuf> {
    write_bundle(path, model)?;
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    let side = PathBuf::from(s);
    fs::write(&side, serde_json::to_string_pretty(&bundle_summary(model, report))? + "\n")?;
    Ok(side)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub sample_id: String,
    pub billboard_id: String,
    pub driver_id: String,
    pub probs: [f64; 3],
    pub pred: GazeClass,
}

pub const PREDICTIONS_HEADER: [&str; 7] = ["sample_id", "billboard_id", "driver_id", "p_none", "p_medium", "p_long", "pred"];
pub const AGGREGATED_HEADER: [&str; 5] = ["billboard_id", "p_none", "p_medium", "p_long", "pred"];

/// Predict rows laid out by `source`.
pub fn predict_rows(model: &EnsembleModel, rows: &[FeatureRow], source: &FeatureSpec) -> Result<Vec<Prediction>> {
    select_columns(rows, source, &model.feature_spec)?
        .into_iter()
        .map(|r| {
            let probs = model.predict_proba(&r.vector)?;
            Ok(Prediction {
                sample_id: r.sample_id,
                billboard_id: r.billboard_id,
                driver_id: r.driver_id,
                probs,
                pred: GazeClass::argmax(&probs),
            })
        })
        .collect()
}

fn prob_fields(p: &[f64; 3]) -> [String; 3] {
    p.map(|v| format!("{v:.9}"))
}

pub fn write_predictions_csv(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PREDICTIONS_HEADER)?;
    for p in preds {
        let [a, b, c] = prob_fields(&p.probs);
        w.write_record([&p.sample_id, &p.billboard_id, &p.driver_id, &a, &b, &c, &p.pred.index().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_probs(rec: &csv::StringRecord, at: usize, path: &Path, line: usize) -> Result<([f64; 3], GazeClass)> {
    let perr = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut p = [0.0; 3];
    for (k, slot) in p.iter_mut().enumerate() {
        *slot = rec[at + k]
            .trim()
            .parse()
            .map_err(|_| perr(format!("bad probability `{}`", &rec[at + k])))?;
    }
    let pred = rec[at + 3].trim().parse::<GazeClass>().map_err(|e| perr(e.to_string()))?;
    Ok((p, pred))
}

/// Either prediction layout, told apart by header.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionFile {
    PerDetection(Vec<Prediction>),
    Aggregated(BTreeMap<String, ([f64; 3], GazeClass)>),
}

pub fn read_predictions(path: &Path) -> Result<PredictionFile> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let per_det = headers.iter().eq(PREDICTIONS_HEADER);
    if !per_det && headers.iter().ne(AGGREGATED_HEADER) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!(
                "expected header `{}` or `{}`",
                PREDICTIONS_HEADER.join(","),
                AGGREGATED_HEADER.join(",")
            ),
        });
    }
    let mut preds = Vec::new();
    let mut agg = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if per_det {
            let (probs, pred) = parse_probs(&rec, 3, path, i + 2)?;
            preds.push(Prediction {
                sample_id: rec[0].to_string(),
                billboard_id: rec[1].to_string(),
                driver_id: rec[2].to_string(),
                probs,
                pred,
            });
        } else {
            agg.insert(rec[0].to_string(), parse_probs(&rec, 1, path, i + 2)?);
        }
    }
    Ok(if per_det {
        PredictionFile::PerDetection(preds)
    } else {
        PredictionFile::Aggregated(agg)
    })
}

pub fn aggregate_predictions(preds: &[Prediction]) -> BTreeMap<String, ([f64; 3], GazeClass)> {
    aggregate(preds.iter().map(|p| (p.billboard_id.as_str(), p.probs)))
}

pub fn write_aggregated_csv(path: &Path, agg: &BTreeMap<String, ([f64; 3], GazeClass)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(AGGREGATED_HEADER)?;
    for (id, (p, c)) in agg {
        let [a, b, d] = prob_fields(p);
        w.write_record([id, &a, &b, &d, &c.index().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn evaluate_per_detection(preds: &[Prediction], truth: &BTreeMap<String, GazeClass>) -> Result<ClsEvalReport> {
    let (mut t, mut p) = (Vec::new(), Vec::new());
    for pr in preds {
        let label = truth
            .get(&pr.sample_id)
            .ok_or_else(|| Error::invalid(format!("no ground truth for sample `{}`", pr.sample_id)))?;
        t.push(*label);
        p.push(pr.pred);
    }
    classification_report(&t, &p)
}

pub fn evaluate_aggregated(
    agg: &BTreeMap<String, ([f64; 3], GazeClass)>,
    truth: &BTreeMap<String, GazeClass>,
) -> Result<ClsEvalReport> {
    let (mut t, mut p) = (Vec::new(), Vec::new());
    for (id, (_, c)) in agg {
        let label = truth
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no ground truth for billboard `{id}`")))?;
        t.push(*label);
        p.push(*c);
    }
    classification_report(&t, &p)
}

/// Classified detections of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageClassification {
    pub detection: Detection,
    pub probs: [f64; 3],
    pub class: GazeClass,
}

/// Detect, featurize and classify every billboard in one image.
pub fn classify_image(
    img: &RgbImage,
    detector_model: &ModelHandle,
    embedder: &ModelHandle,
    cfg: &DetectorConfig,
    model: &EnsembleModel,
) -> Result<Vec<ImageClassification>> {
    let dets = detector::detect(img, detector_model, cfg)?;
    let spec = model.feature_spec;
    let needs_embed = spec.use_ifull || spec.use_icrop;
    let (w, h) = img.dimensions();
    let (full, crops) = if needs_embed {
        let (f, c) = embed_detections(img, &dets, embedder)?;
        (Some(f), c)
    } else {
        (None, Vec::new())
    };
    dets.iter()
        .enumerate()
        .map(|(i, d)| {
            let nbox = to_norm(&d.bbox, w as f64, h as f64)?;
            let vector = assemble(
                &spec,
                &FeatureInputs {
                    bbox: Some(&nbox),
                    pca_full: model.pca_full.as_ref(),
                    pca_crop: model.pca_crop.as_ref(),
                    full: full.as_ref(),
                    crop: crops.get(i),
                },
            )?;
            let probs = model.predict_proba(&vector)?;
            Ok(ImageClassification {
                detection: *d,
                probs,
                class: GazeClass::argmax(&probs),
            })
        })
        .collect()
}

/// Everything up to and including full-layout feature rows.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub manifest: Manifest,
    pub detections: DetectionTable,
    pub pcas: PcaSidecar,
    pub train: Vec<FeatureRow>,
    pub test: Vec<FeatureRow>,
}

pub fn extract(cfg: &PipelineConfig, jobs: usize) -> Result<Extraction> {
    let root = cfg.dataset_root()?;
    let manifest = dataset::build_manifest(root, &cfg.split_file()?)?;
    let detector_model = cfg.load_detector()?;
    let embedder = cfg.load_embedder()?;
    let images = root.join("images");
    let paths: Vec<PathBuf> = manifest.frames(None).iter().map(|f| images.join(f)).collect();
    let detections = detect_images(&paths, &images, &detector_model, &cfg.detector, jobs)?;
    let associated = dataset::associate_manifest(root, &manifest, &detections, cfg.features.assoc_iou)?;
    let selected = dataset::select_top_frames(associated, cfg.features.top_n);
    let samples = embed_samples(root, &selected, &embedder, jobs)?;
    let (train, test): (Vec<RawSample>, Vec<RawSample>) = samples.into_iter().partition(|s| s.split == Split::Train);
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid(format!(
            "need samples in both splits, got {} train and {} test",
            train.len(),
            test.len()
        )));
    }
    let pcas = PcaSidecar::fit(&train, cfg.features.pca_k)?;
    Ok(Extraction {
        train: feature_rows(&train, &pcas)?,
        test: feature_rows(&test, &pcas)?,
        manifest,
        detections,
        pcas,
    })
}

/// Train on `ex.train` with `spec`, then score `ex.test`.
pub struct Evaluated {
    pub model: EnsembleModel,
    pub cv: CvReport,
    pub predictions: Vec<Prediction>,
    pub aggregated: BTreeMap<String, ([f64; 3], GazeClass)>,
    pub per_detection_report: ClsEvalReport,
    pub aggregated_report: ClsEvalReport,
}

pub fn train_and_evaluate(cfg: &PipelineConfig, ex: &Extraction, spec: &FeatureSpec, jobs: usize) -> Result<Evaluated> {
    let source = ex.pcas.source_spec();
    let c = &cfg.classifier;
    let (model, cv) = train_model(&ex.train, &source, spec, c.folds, c.seed, &c.search, Some(&ex.pcas), jobs)?;
    let predictions = predict_rows(&model, &ex.test, &source)?;
    let aggregated = aggregate_predictions(&predictions);
    let per_detection_report = evaluate_per_detection(&predictions, &ex.manifest.sample_labels())?;
    let aggregated_report = evaluate_aggregated(&aggregated, &ex.manifest.billboard_labels()?)?;
    Ok(Evaluated {
        model,
        cv,
        predictions,
        aggregated,
        per_detection_report,
        aggregated_report,
    })
}

fn counts_json(ex: &Extraction) -> serde_json::Value {
    let c = ex.manifest.counts();
    json!({
        "manifest_records": c.records,
        "frames": c.frames,
        "train_billboards": c.train_billboards,
        "test_billboards": c.test_billboards,
        "drivers": c.drivers,
        "detections": ex.detections.values().map(Vec::len).sum::<usize>(),
        "train_samples": ex.train.len(),
        "test_samples": ex.test.len(),
    })
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

/// Full run into `out_dir`; returns the artifact paths in write order.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path, jobs: usize) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut out = |name: &str| {
        let p = out_dir.join(name);
        written.push(p.clone());
        p
    };

    fs::write(out("effective_config.toml"), cfg.to_toml()?)?;
    let ex = extract(cfg, jobs)?;
    dataset::write_manifest_csv(&out("manifest.csv"), &ex.manifest.records)?;
    detector::write_detections_csv(&out("detections.csv"), &ex.detections)?;
    let feats = out("features.csv");
    features::write_features_csv(&feats, &ex.train)?;
    ex.pcas.write(&out("features.csv.pca.json"))?;
    features::write_features_csv(&out("test_features.csv"), &ex.test)?;

    let spec = cfg.features.feature_spec();
    let ev = train_and_evaluate(cfg, &ex, &spec, jobs)?;
    let bundle = out("model.bgz");
    save_model(&bundle, &ev.model, Some(&ev.cv))?;
    out("model.bgz.json");
    write_predictions_csv(&out("preds.csv"), &ev.predictions)?;
    write_aggregated_csv(&out("aggregated.csv"), &ev.aggregated)?;
    let report = json!({
        "feature_spec": spec.to_string(),
        "counts": counts_json(&ex),
        "per_detection": ev.per_detection_report.to_json(),
        "aggregated": ev.aggregated_report.to_json(),
    });
    write_json(&out("report.json"), &report)?;
    Ok(written)
}

/// One row of the feature-family ablation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub spec: String,
    pub per_detection: ClsEvalReport,
    pub aggregated: ClsEvalReport,
}

/// Train and score every non-empty family combination on one extraction.
pub fn run_ablation(cfg: &PipelineConfig, out_dir: &Path, jobs: usize) -> Result<(Vec<AblationRow>, Vec<PathBuf>)> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let ex = extract(cfg, jobs)?;
    let mut rows = Vec::new();
    for spec in FeatureSpec::ablation_rows(cfg.features.pca_k) {
        let ev = train_and_evaluate(cfg, &ex, &spec, jobs)?;
        rows.push(AblationRow {
            spec: spec.to_string(),
            per_detection: ev.per_detection_report,
            aggregated: ev.aggregated_report,
        });
    }
    let csv_path = out_dir.join("ablation.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["spec", "accuracy", "macro_f1", "micro_f1", "agg_accuracy", "agg_macro_f1", "agg_micro_f1"])?;
    for r in &rows {
        let f = |v: f64| format!("{v:.6}");
        w.write_record([
            r.spec.clone(),
            f(r.per_detection.accuracy),
            f(r.per_detection.macro_f1),
            f(r.per_detection.micro_f1),
            f(r.aggregated.accuracy),
            f(r.aggregated.macro_f1),
            f(r.aggregated.micro_f1),
        ])?;
    }
    w.flush()?;
    let json_path = out_dir.join("ablation.json");
    write_json(&json_path, &json!({ "counts": counts_json(&ex), "rows": rows.iter().map(|r| json!({
        "spec": r.spec,
        "per_detection": r.per_detection.to_json(),
        "aggregated": r.aggregated.to_json(),
    })).collect::<Vec<_>>() }))?;
    Ok((rows, vec![csv_path, json_path]))
}
