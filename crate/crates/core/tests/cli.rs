// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use billboard_gaze::config::PipelineConfig;
use billboard_gaze::synth::fixture_config;
use sha2::{Digest, Sha256};

/// SHA-256 of the annotated PNG produced by `annotate_golden_image`.
const GOLDEN_ANNOTATION: &str = "de39b83fb8d10f0e6b7bf75ee9242d5e3c8308e9e21ed7dd4ee073eb1cf0fa27";

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini_lamac")
}

fn bgz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bgz"))
        .args(args)
        .env_remove("BGZ_BACKEND")
        .output()
        .expect("spawn bgz")
}

fn ok(args: &[&str]) -> String {
    let o = bgz(args);
    assert!(
        o.status.success(),
        "bgz {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Fixture config with a small search so the CLI chain stays fast.
fn write_config(dir: &Path) -> PathBuf {
    let text = format!(
        "dataset_root = {:?}\n{}\n[classifier]\nfolds = 3\n\n[classifier.search]\nn_configs = 3\nsoftmax_epochs = 100\n",
        s(&root()),
        fixture_config()
    );
    let p = dir.join("bgz.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn version_and_help_exit_zero() {
    assert_eq!(bgz(&["--version"]).status.code(), Some(0));
    assert_eq!(bgz(&["--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bgz(&[]).status.code(), Some(1));
    assert_eq!(bgz(&["detect"]).status.code(), Some(1));
    assert_eq!(bgz(&["eval-det", "--pred", "p.csv", "--gt", "g", "--iou", "bogus"]).status.code(), Some(1));
}

#[test]
fn invalid_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "backend = \"onnx\"\n").unwrap();
    let o = bgz(&["--config", s(&cfg), "detect", "--input", s(&root().join("images"))]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(bgz(&["--config", s(&cfg), "aggregate", "--pred", "x", "--out", "y"]).status.code(), Some(1));
}

#[test]
fn unreadable_graph_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let fake = tmp.path().join("broken.onnx");
    std::fs::write(&fake, b"not a graph").unwrap();
    let o = bgz(&[
        "detect",
        "--input",
        s(&root().join("images/drv0")),
        "--backend",
        "onnx",
        "--detector-model",
        s(&fake),
        "--embedder-model",
        s(&fake),
    ]);
    assert!(matches!(o.status.code(), Some(1) | Some(2)), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn config_round_trips_through_toml() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::from_toml(&std::fs::read_to_string(write_config(tmp.path())).unwrap()).unwrap();
    let again = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(cfg.classifier.search.n_configs, 3);
}

#[test]
fn staged_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = write_config(t);
    let c = s(&cfg);
    let det = t.join("detections.csv");
    ok(&["--config", c, "detect", "--input", s(&root().join("images")), "--out", s(&det)]);

    let train = t.join("train.csv");
    let out = ok(&["--config", c, "extract-features", "--split", "train", "--detections", s(&det), "--out", s(&train)]);
    assert!(out.contains("train.csv.pca.json"));
    let test = t.join("test.csv");
    ok(&[
        "--config",
        c,
        "extract-features",
        "--split",
        "test",
        "--detections",
        s(&det),
        "--pca",
        s(&t.join("train.csv.pca.json")),
        "--out",
        s(&test),
    ]);

    let model = t.join("model.bgz");
    ok(&["--config", c, "train", "--features", s(&train), "--spec", "B,Icrop", "--out", s(&model)]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.join("model.bgz.json")).unwrap()).unwrap();
    assert_eq!(summary["feature_spec"], "B,Icrop");

    let preds = t.join("preds.csv");
    ok(&["classify", "--model", s(&model), "--features", s(&test), "--out", s(&preds)]);
    let agg = t.join("agg.csv");
    ok(&["aggregate", "--pred", s(&preds), "--out", s(&agg)]);

    let manifest = root().join("manifest.csv");
    let report = t.join("cls.json");
    ok(&["eval-cls", "--pred", s(&preds), "--truth", s(&manifest), "--per-detection", "--report", s(&report)]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["accuracy", "macro_f1", "micro_f1", "weighted_f1", "confusion"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    ok(&["eval-cls", "--pred", s(&agg), "--truth", s(&manifest), "--report", s(&report)]);

    let det_report = t.join("det.json");
    ok(&["eval-det", "--pred", s(&det), "--gt", s(&root().join("labels")), "--iou", "range", "--report", s(&det_report)]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&det_report).unwrap()).unwrap();
    let keys: Vec<&str> = r.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys.len(), 4, "{keys:?}");

    // image mode with the same stub backend
    let frame = root().join("images/drv0/bb00_00.png");
    let classified = t.join("classified.csv");
    let out = ok(&["--config", c, "classify", "--model", s(&model), "--image", s(&frame), "--out", s(&classified)]);
    assert!(out.contains("class="));
    let annotated = t.join("annotated.png");
    ok(&["annotate", "--image", s(&frame), "--detections", s(&classified), "--out", s(&annotated)]);
    assert!(annotated.exists());
}

#[test]
fn pipeline_subcommand_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out_dir = tmp.path().join("run");
    let out = ok(&["--config", s(&cfg), "pipeline", "--spec", "B", "--seed", "3", "--out", s(&out_dir)]);
    for name in ["manifest.csv", "detections.csv", "model.bgz", "preds.csv", "aggregated.csv", "report.json"] {
        assert!(out_dir.join(name).exists(), "{name}");
        assert!(out.contains(name), "{name} not printed");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["feature_spec"], "B");
}

#[test]
fn env_override_beats_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let o = Command::new(env!("CARGO_BIN_EXE_bgz"))
        .args(["--config", s(&cfg), "detect", "--input", s(&root().join("images/drv0/bb00_00.png"))])
        .env("BGZ_DETECTOR__CONF_THRESHOLD", "1.5")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn annotate_golden_image() {
    let tmp = tempfile::tempdir().unwrap();
    let dets = tmp.path().join("dets.csv");
    std::fs::write(
        &dets,
        "image,det_id,x1,y1,x2,y2,score,class\n\
         frame.png,0,20,30,70,60,0.87,medium\n\
         frame.png,1,90,50,150,110,0.42,long\n\
         frame.png,2,5,80,40,115,0.66,none\n",
    )
    .unwrap();
    let frame = tmp.path().join("frame.png");
    image::RgbImage::from_fn(160, 120, |x, y| image::Rgb([(x % 256) as u8, (y * 2) as u8, 90]))
        .save(&frame)
        .unwrap();
    let out = tmp.path().join("out.png");
    ok(&["annotate", "--image", s(&frame), "--detections", s(&dets), "--out", s(&out)]);
    let pixels = image::open(&out).unwrap().to_rgb8().into_raw();
    let digest: String = Sha256::digest(&pixels).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(digest, GOLDEN_ANNOTATION);
}
