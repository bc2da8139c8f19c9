// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use billboard_gaze::config::PipelineConfig;
use billboard_gaze::dataset::{build_manifest, read_manifest_csv, write_manifest_csv, Split};
use billboard_gaze::detector::{collect_images, write_detections_csv};
use billboard_gaze::pipeline::detect_images;
use billboard_gaze::synth::{fixture_config, write_fixture_dataset};
use sha2::{Digest, Sha256};

const FIXTURE_SEED: u64 = 2024;
/// SHA-256 of detections.csv for every fixture image under the stub backend.
const GOLDEN_DETECTIONS: &str = "d0ac7ffbeffd1a398fdce2581f7434804ffe5a5db3266c8fdec888e7c0417215";

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini_lamac")
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let key = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(key, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn regeneration_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture_dataset(tmp.path(), FIXTURE_SEED).unwrap();
    let fresh = tree(tmp.path());
    let committed = tree(&root());
    assert_eq!(
        fresh.keys().collect::<Vec<_>>(),
        committed.keys().collect::<Vec<_>>(),
        "file sets differ"
    );
    for (k, v) in &fresh {
        assert!(committed[k] == *v, "{k} differs from the committed fixture");
    }
}

#[test]
fn manifest_is_consistent() {
    let m = build_manifest(&root(), &root().join("test_billboards.txt")).unwrap();
    let c = m.counts();
    assert!(c.train_billboards == 9 && c.test_billboards == 3 && c.drivers == 2);
    let test_bb: std::collections::BTreeSet<_> =
        m.records.iter().filter(|r| r.split == Split::Test).map(|r| r.billboard_id.as_str()).collect();
    assert_eq!(test_bb.len(), 3);
    assert!(m.records.iter().all(|r| r.gt_box.is_some()));
    m.billboard_labels().unwrap();
}

#[test]
fn manifest_round_trip_is_idempotent() {
    let m = build_manifest(&root(), &root().join("test_billboards.txt")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    write_manifest_csv(&a, &m.records).unwrap();
    let rows = read_manifest_csv(&a).unwrap();
    assert_eq!(rows.len(), m.records.len());
    write_manifest_csv(&b, &m.records).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn stub_detections_match_golden() {
    let cfg = PipelineConfig::from_toml(&fixture_config()).unwrap();
    let model = cfg.load_detector().unwrap();
    let images_dir = root().join("images");
    let paths = collect_images(&images_dir).unwrap();
    let table = detect_images(&paths, &images_dir, &model, &cfg.detector, 1).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("detections.csv");
    write_detections_csv(&out, &table).unwrap();
    let digest = hex(&Sha256::digest(std::fs::read(&out).unwrap()));
    assert_eq!(digest, GOLDEN_DETECTIONS);
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
