// SPDX-License-Identifier: Apache-2.0

//! `bgz` command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::backend::BackendKind;
use crate::classifier::read_bundle;
use crate::config::PipelineConfig;
use crate::dataset::{self, Manifest, SampleRecord, Split};
use crate::detector::{collect_images, read_detections_csv, write_detections_csv};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_detections, IouSpec};
use crate::features::{read_features_csv, write_features_csv, FeatureSpec};
use crate::geometry::{BBox, GazeClass};
use crate::imaging::load_rgb;
use crate::pipeline::{self, PcaSidecar, PredictionFile};
use crate::render;

#[derive(Debug, Parser)]
#[command(name = "bgz", version, about = "Billboard detection and driver gaze-duration classification")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for image-level and tuning work.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct BackendFlags {
    /// `stub` or `onnx`.
    #[arg(long)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub detector_model: Option<PathBuf>,
    #[arg(long)]
    pub embedder_model: Option<PathBuf>,
    #[arg(long)]
    pub conf: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect billboards in an image or a directory of images.
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendFlags,
    },
    /// Build classifier feature rows for one split of a dataset.
    ExtractFeatures {
        #[arg(long)]
        dataset_root: Option<PathBuf>,
        #[arg(long)]
        split: Split,
        /// Reuse detections instead of running the detector.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// PCA sidecar from the training extraction (required for `test`).
        #[arg(long)]
        pca: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendFlags,
    },
    /// Tune and fit the ensemble on a features file.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        spec: Option<FeatureSpec>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pca: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify detections in an image, or rows of a features file.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "features", required_unless_present = "features")]
        image: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendFlags,
    },
    /// Vote per-detection probabilities into one class per billboard.
    Aggregate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detection metrics against YOLO labels.
    EvalDet {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Image directory; defaults to `images` next to the label directory.
        #[arg(long)]
        images: Option<PathBuf>,
        /// IoU for precision/recall, or `range` for the 0.50:0.95 mean.
        #[arg(long, default_value = "0.5")]
        iou: IouSpec,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Classification metrics against a manifest.
    EvalCls {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, conflicts_with = "aggregated")]
        per_detection: bool,
        #[arg(long)]
        aggregated: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Draw boxes and class captions on an image.
    Annotate {
        #[arg(long)]
        image: PathBuf,
        /// Detections or classify output; an optional `class` column colors boxes.
        #[arg(long)]
        detections: PathBuf,
        /// Row key in the detections file; defaults to the image file name.
        #[arg(long)]
        key: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect, select, embed, tune, classify, vote and evaluate in one go.
    Pipeline {
        #[arg(long)]
        dataset_root: Option<PathBuf>,
        #[arg(long)]
        spec: Option<FeatureSpec>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run all seven feature-family combinations instead.
        #[arg(long)]
        ablation: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendFlags,
    },
}

impl BackendFlags {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(b) = self.backend {
            cfg.backend = b;
        }
        if let Some(p) = &self.detector_model {
            cfg.detector_model = Some(p.clone());
        }
        if let Some(p) = &self.embedder_model {
            cfg.embedder_model = Some(p.clone());
        }
        if let Some(c) = self.conf {
            cfg.detector.conf_threshold = c;
        }
    }
}

fn say(p: &Path) {
    println!("{}", p.display());
}

fn manifest_from_rows(rows: Vec<dataset::ManifestRow>) -> Manifest {
    Manifest {
        records: rows
            .into_iter()
            .map(|r| SampleRecord {
                frame: r.frame,
                billboard_id: r.billboard_id,
                driver_id: r.driver_id,
                gaze_label: r.gaze_class,
                gt_box: None,
                split: r.split,
            })
            .collect(),
    }
}

fn print_report(v: &serde_json::Value, report: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(v)? + "\n";
    match report {
        Some(p) => {
            std::fs::write(p, &text)?;
            say(p);
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Parse arguments, load configuration and run the chosen subcommand.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    let jobs = cli.jobs.max(1);
    match cli.command {
        Command::Detect { input, out, backend } => {
            backend.apply(&mut cfg);
            cfg.validate()?;
            let model = cfg.load_detector()?;
            let paths = collect_images(&input)?;
            let table = pipeline::detect_images(&paths, &input, &model, &cfg.detector, jobs)?;
            match out {
                Some(o) => {
                    write_detections_csv(&o, &table)?;
                    say(&o);
                }
                None => {
                    for (img, dets) in &table {
                        for (i, d) in dets.iter().enumerate() {
                            let b = d.bbox;
                            println!("{img} {i} {:.1} {:.1} {:.1} {:.1} {:.3}", b.x1, b.y1, b.x2, b.y2, d.score);
                        }
                    }
                }
            }
        }
        Command::ExtractFeatures {
            dataset_root,
            split,
            detections,
            pca,
            out,
            backend,
        } => {
            backend.apply(&mut cfg);
            if let Some(r) = dataset_root {
                cfg.dataset_root = Some(r);
            }
            cfg.validate()?;
            let root = cfg.dataset_root()?.to_path_buf();
            let manifest = dataset::build_manifest(&root, &cfg.split_file()?)?;
            let frames: Vec<&str> = manifest.frames(Some(split));
            let table = match detections {
                Some(p) => read_detections_csv(&p)?,
                None => {
                    let images = root.join("images");
                    let paths: Vec<PathBuf> = frames.iter().map(|f| images.join(f)).collect();
                    pipeline::detect_images(&paths, &images, &cfg.load_detector()?, &cfg.detector, jobs)?
                }
            };
            let assoc = dataset::associate_manifest(&root, &manifest, &table, cfg.features.assoc_iou)?;
            let assoc = assoc.into_iter().filter(|a| a.split == split).collect();
            let selected = dataset::select_top_frames(assoc, cfg.features.top_n);
            let samples = pipeline::embed_samples(&root, &selected, &cfg.load_embedder()?, jobs)?;
            let pcas = match (pca, split) {
                (Some(p), _) => PcaSidecar::read(&p)?,
                (None, Split::Train) => PcaSidecar::fit(&samples, cfg.features.pca_k)?,
                (None, Split::Test) => {
                    return Err(Error::Config("--pca is required for the test split".into()))
                }
            };
            let rows = pipeline::feature_rows(&samples, &pcas)?;
            write_features_csv(&out, &rows)?;
            say(&out);
            let side = PcaSidecar::path_for(&out);
            pcas.write(&side)?;
            say(&side);
        }
        Command::Train {
            features,
            spec,
            folds,
            seed,
            pca,
            out,
        } => {
            let rows = read_features_csv(&features)?;
            let side = pca.unwrap_or_else(|| PcaSidecar::path_for(&features));
            let pcas = if side.exists() { Some(PcaSidecar::read(&side)?) } else { None };
            let d = rows.first().map_or(0, |r| r.vector.len());
            let source = match &pcas {
                Some(p) => p.source_spec(),
                None => pipeline::spec_from_width(d)?,
            };
            let target = match spec {
                Some(s) => FeatureSpec {
                    pca_k: if s.use_ifull || s.use_icrop { cfg.features.pca_k.min(source.pca_k) } else { source.pca_k },
                    ..s
                },
                None => cfg.features.feature_spec(),
            };
            let c = &cfg.classifier;
            let (model, report) = pipeline::train_model(
                &rows,
                &source,
                &target,
                folds.unwrap_or(c.folds),
                seed.unwrap_or(c.seed),
                &c.search,
                pcas.as_ref(),
                jobs,
            )?;
            let summary = pipeline::save_model(&out, &model, Some(&report))?;
            say(&out);
            say(&summary);
        }
        Command::Classify {
            model,
            image,
            features,
            out,
            backend,
        } => {
            backend.apply(&mut cfg);
            cfg.validate()?;
            let m = read_bundle(&model)?;
            if let Some(f) = features {
                let rows = read_features_csv(&f)?;
                let d = rows.first().map_or(m.dim(), |r| r.vector.len());
                let source = if d == m.dim() { m.feature_spec } else { pipeline::spec_from_width(d)? };
                let preds = pipeline::predict_rows(&m, &rows, &source)?;
                match out {
                    Some(o) => {
                        pipeline::write_predictions_csv(&o, &preds)?;
                        say(&o);
                    }
                    None => {
                        for p in preds {
                            println!("{} {}", p.sample_id, p.pred);
                        }
                    }
                }
            } else if let Some(img_path) = image {
                let img = load_rgb(&img_path)?;
                let det_model = cfg.load_detector()?;
                let embedder = if m.feature_spec.use_ifull || m.feature_spec.use_icrop {
                    cfg.load_embedder()?
                } else {
                    crate::features::stub_embedder(0)?
                };
                let res = pipeline::classify_image(&img, &det_model, &embedder, &cfg.detector, &m)?;
                let key = pipeline::image_key(&img_path, &img_path);
                for (i, r) in res.iter().enumerate() {
                    let b = r.detection.bbox;
                    println!(
                        "{key} {i} {:.1} {:.1} {:.1} {:.1} score={:.3} class={} p=({:.3},{:.3},{:.3})",
                        b.x1, b.y1, b.x2, b.y2, r.detection.score, r.class, r.probs[0], r.probs[1], r.probs[2]
                    );
                }
                if let Some(o) = out {
                    write_classified_csv(&o, &key, &res)?;
                    say(&o);
                }
            }
        }
        Command::Aggregate { pred, out } => {
            let PredictionFile::PerDetection(preds) = pipeline::read_predictions(&pred)? else {
                return Err(Error::invalid("aggregate expects per-detection predictions"));
            };
            pipeline::write_aggregated_csv(&out, &pipeline::aggregate_predictions(&preds))?;
            say(&out);
        }
        Command::EvalDet {
            pred,
            gt,
            images,
            iou,
            report,
        } => {
            let preds = read_detections_csv(&pred)?;
            let images = images.unwrap_or_else(|| gt.parent().unwrap_or(Path::new(".")).join("images"));
            let gts = load_gt(&gt, &images)?;
            let r = evaluate_detections(&preds, &gts, iou);
            print_report(&r.to_json(), report.as_deref())?;
        }
        Command::EvalCls {
            pred,
            truth,
            per_detection: _,
            aggregated,
            report,
        } => {
            let manifest = manifest_from_rows(dataset::read_manifest_csv(&truth)?);
            let r = match pipeline::read_predictions(&pred)? {
                PredictionFile::Aggregated(agg) => pipeline::evaluate_aggregated(&agg, &manifest.billboard_labels()?)?,
                PredictionFile::PerDetection(p) if aggregated => pipeline::evaluate_aggregated(
                    &pipeline::aggregate_predictions(&p),
                    &manifest.billboard_labels()?,
                )?,
                PredictionFile::PerDetection(p) => pipeline::evaluate_per_detection(&p, &manifest.sample_labels())?,
            };
            print_report(&r.to_json(), report.as_deref())?;
        }
        Command::Annotate {
            image,
            detections,
            key,
            out,
        } => {
            let key = key.unwrap_or_else(|| pipeline::image_key(&image, &image));
            let items = read_annotations(&detections, &key)?;
            render::annotate_file(&image, &items, &out)?;
            say(&out);
        }
        Command::Pipeline {
            dataset_root,
            spec,
            seed,
            ablation,
            out,
            backend,
        } => {
            backend.apply(&mut cfg);
            if let Some(r) = dataset_root {
                cfg.dataset_root = Some(r);
            }
            if let Some(s) = spec {
                cfg.features.spec = FeatureSpec { pca_k: cfg.features.pca_k, ..s };
            }
            if let Some(s) = seed {
                cfg.classifier.seed = s;
            }
            cfg.validate()?;
            let paths = if ablation {
                let (rows, paths) = pipeline::run_ablation(&cfg, &out, jobs)?;
                for r in rows {
                    eprintln!(
                        "{:<14} acc {:.3} macro-F1 {:.3} | aggregated acc {:.3} macro-F1 {:.3}",
                        r.spec, r.per_detection.accuracy, r.per_detection.macro_f1, r.aggregated.accuracy, r.aggregated.macro_f1
                    );
                }
                paths
            } else {
                pipeline::run_pipeline(&cfg, &out, jobs)?
            };
            for p in paths {
                say(&p);
            }
        }
    }
    Ok(())
}

/// GT boxes in pixels for every image under `images`, from `labels/<key>.txt`.
pub fn load_gt(labels: &Path, images: &Path) -> Result<BTreeMap<String, Vec<BBox>>> {
    let mut out = BTreeMap::new();
    for p in collect_images(images)? {
        let key = pipeline::image_key(&p, images);
        let lp = labels.join(Path::new(&key).with_extension("txt"));
        let boxes = if lp.exists() {
            let (w, h) = image::image_dimensions(&p)?;
            dataset::parse_yolo_labels(&lp)?
                .into_iter()
                .map(|y| y.bbox.to_bbox(w as f64, h as f64))
                .collect()
        } else {
            Vec::new()
        };
        out.insert(key, boxes);
    }
    Ok(out)
}

pub const CLASSIFIED_HEADER: [&str; 11] = [
    "image", "det_id", "x1", "y1", "x2", "y2", "score", "p_none", "p_medium", "p_long", "class",
];

pub fn write_classified_csv(path: &Path, key: &str, res: &[pipeline::ImageClassification]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CLASSIFIED_HEADER)?;
    for (i, r) in res.iter().enumerate() {
        let b = r.detection.bbox;
        let mut rec = vec![key.to_string(), i.to_string()];
        rec.extend([b.x1, b.y1, b.x2, b.y2, r.detection.score].map(|v| format!("{v:.6}")));
        rec.extend(r.probs.map(|v| format!("{v:.9}")));
        rec.push(r.class.index().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_annotations(path: &Path, key: &str) -> Result<Vec<(crate::geometry::Detection, Option<GazeClass>)>> {
    let dets = read_detections_csv(path)?.remove(key).unwrap_or_default();
    let mut r = csv::Reader::from_path(path)?;
    let class_col = r.headers()?.iter().position(|h| h == "class");
    let mut classes: BTreeMap<usize, GazeClass> = BTreeMap::new();
    if let Some(col) = class_col {
        for rec in r.records() {
            let rec = rec?;
            if &rec[0] == key {
                let id: usize = rec[1].trim().parse().map_err(|_| Error::invalid("bad det_id"))?;
                classes.insert(id, rec[col].trim().parse()?);
            }
        }
    }
    let mut ids: Vec<usize> = classes.keys().copied().collect();
    ids.sort();
    Ok(dets
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let c = if class_col.is_some() { ids.get(i).and_then(|id| classes.get(id)).copied() } else { None };
            (d, c)
        })
        .collect())
}

/// Process exit status for a finished run.
pub fn exit_status(res: &Result<()>) -> i32 {
    match res {
        Ok(()) => 0,
        Err(e) => e.exit_code(),
    }
}
