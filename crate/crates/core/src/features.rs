// SPDX-License-Identifier: Apache-2.0

//! Classifier inputs: box geometry `B`, PCA-reduced CLS embeddings of the
//! whole frame (`I_full`) and of the billboard crop (`I_crop`).
//!
//! A feature vector is always laid out as `[B | PCA(I_full) | PCA(I_crop)]`,
//! with disabled blocks omitted.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::backend::{ModelHandle, StubOutput, TensorSpec};
use crate::error::{Error, Result};
use crate::geometry::{BBox, GazeClass, NormBBox};
use crate::imaging;
use crate::linalg;

/// Width of the CLS embedding of the small vision-transformer backbone.
pub const EMBED_DIM: usize = 384;
/// Default square input of the embedding backbone.
pub const EMBED_INPUT: usize = 224;
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    Full,
    Crop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f32>,
    pub source: EmbeddingSource,
}

impl Embedding {
    pub fn new(values: Vec<f32>, source: EmbeddingSource) -> Result<Self> {
        if values.len() != EMBED_DIM {
            return Err(Error::DimensionMismatch {
                expected: EMBED_DIM,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Backend("non-finite embedding".into()));
        }
        Ok(Self { values, source })
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Stub backbone: `(1, 3, 224, 224)` in, `(1, 257, 384)` token states out.
pub fn stub_embedder(seed: u64) -> Result<ModelHandle> {
    let n = EMBED_INPUT as i64;
    ModelHandle::stub(
        vec![TensorSpec::new("pixel_values", vec![1, 3, n, n])?],
        vec![StubOutput::uniform(
            TensorSpec::new("last_hidden_state", vec![1, 257, EMBED_DIM as i64])?,
            -1.0,
            1.0,
        )],
        seed,
    )
}

/// CLS embedding of an image region.
pub fn embed(region: &RgbImage, model: &ModelHandle, source: EmbeddingSource) -> Result<Embedding> {
    let (w, h) = region.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::DegenerateBox);
    }
    let spec = &model.input_specs[0];
    if spec.shape.len() != 4 {
        return Err(Error::invalid(format!(
            "embedding input `{}` must be rank 4, got {:?}",
            spec.name, spec.shape
        )));
    }
    let dim = |d: i64| if d > 0 { d as usize } else { EMBED_INPUT };
    let (in_h, in_w) = (dim(spec.shape[2]), dim(spec.shape[3]));
    let tensor = imaging::resize_normalized(region, in_w, in_h, IMAGENET_MEAN, IMAGENET_STD)?;
    let outputs = model.forward_single(tensor.into_dyn())?;
    let out = &outputs[&model.output_specs[0].name];
    let cls: Vec<f32> = match out.ndim() {
        3 => out.slice(ndarray::s![0, 0, ..]).to_vec(),
        2 => out.slice(ndarray::s![0, ..]).to_vec(),
        n => {
            return Err(Error::Backend(format!(
                "embedding output has rank {n}, expected 2 or 3"
            )))
        }
    };
    Embedding::new(cls, source)
}

/// Axis-aligned crop of the box after clamping, widened to whole pixels.
pub fn crop_for_embedding(img: &RgbImage, bbox: &BBox) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    let b = bbox.clamp(w as f64, h as f64);
    if b.area() <= 0.0 {
        return Err(Error::DegenerateBox);
    }
    let x0 = b.x1.floor() as u32;
    let y0 = b.y1.floor() as u32;
    let x1 = (b.x2.ceil() as u32).min(w);
    let y1 = (b.y2.ceil() as u32).min(h);
    Ok(image::imageops::crop_imm(img, x0, y0, x1 - x0, y1 - y0).to_image())
}

/// Mean-centered PCA basis. `components` rows are orthonormal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaTransform {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl PcaTransform {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `components · (e - mean)`.
    pub fn project(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: e.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|row| {
                row.iter()
                    .zip(e.iter().zip(&self.mean))
                    .map(|(r, (x, m))| r * (x - m))
                    .sum()
            })
            .collect())
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (coef, row) in z.iter().zip(&self.components) {
            for (o, r) in out.iter_mut().zip(row) {
                *o += coef * r;
            }
        }
        out
    }

    /// Keep the leading `k` components.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k() {
            return Err(Error::invalid(format!("cannot truncate {} components to {k}", self.k())));
        }
        Ok(Self {
            mean: self.mean.clone(),
            components: self.components[..k].to_vec(),
            explained_variance: self.explained_variance[..k].to_vec(),
        })
    }
}

/// Fit a `k`-component PCA on `rows` (each of equal length).
///
/// Components are the top right singular vectors of the centered data, each
/// flipped so its largest-magnitude entry is positive.
pub fn pca_fit(rows: &[Vec<f64>], k: usize) -> Result<PcaTransform> {
    let n = rows.len();
    if k == 0 || n <= k {
        return Err(Error::invalid(format!("PCA needs n > k >= 1, got n={n}, k={k}")));
    }
    let d = rows[0].len();
    if k > d {
        return Err(Error::invalid(format!("PCA k={k} exceeds dimension {d}")));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("PCA rows have unequal lengths"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("PCA input contains non-finite values"));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut centered = Vec::with_capacity(n * d);
    for r in rows {
        centered.extend(r.iter().zip(&mean).map(|(v, m)| v - m));
    }
    let svd = linalg::right_svd(&centered, n, d);
    let mut components = svd.vectors[..k].to_vec();
    for row in components.iter_mut() {
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = i;
            }
        }
        if row[best] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let explained_variance = svd.singular_values[..k]
        .iter()
        .map(|s| s * s / (n as f64 - 1.0))
        .collect();
    Ok(PcaTransform {
        mean,
        components,
        explained_variance,
    })
}

/// Which feature families feed the classifier, and the PCA width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureSpec {
    pub use_b: bool,
    pub use_ifull: bool,
    pub use_icrop: bool,
    pub pca_k: usize,
}

impl FeatureSpec {
    pub fn new(use_b: bool, use_ifull: bool, use_icrop: bool, pca_k: usize) -> Result<Self> {
        let spec = Self {
            use_b,
            use_ifull,
            use_icrop,
            pca_k,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.use_b || self.use_ifull || self.use_icrop) {
            return Err(Error::Config("feature spec enables no family".into()));
        }
        if (self.use_ifull || self.use_icrop) && self.pca_k == 0 {
            return Err(Error::Config("pca_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn all(pca_k: usize) -> Self {
        Self {
            use_b: true,
            use_ifull: true,
            use_icrop: true,
            pca_k,
        }
    }

    /// The seven non-empty family combinations, in ablation-table order.
    pub fn ablation_rows(pca_k: usize) -> Vec<Self> {
        [
            (true, false, false),
            (false, true, false),
            (false, false, true),
            (false, true, true),
            (true, true, false),
            (true, false, true),
            (true, true, true),
        ]
        .into_iter()
        .map(|(b, f, c)| Self {
            use_b: b,
            use_ifull: f,
            use_icrop: c,
            pca_k,
        })
        .collect()
    }

    pub fn dim(&self) -> usize {
        4 * self.use_b as usize
            + self.pca_k * self.use_ifull as usize
            + self.pca_k * self.use_icrop as usize
    }

    /// Column indices of this spec's vector within a vector laid out by `source`.
    pub fn columns_within(&self, source: &FeatureSpec) -> Result<Vec<usize>> {
        let missing = (self.use_b && !source.use_b)
            || (self.use_ifull && !source.use_ifull)
            || (self.use_icrop && !source.use_icrop);
        let k_used = if self.use_ifull || self.use_icrop { self.pca_k } else { 0 };
        if missing || k_used > source.pca_k {
            return Err(Error::invalid(format!(
                "feature spec {self} is not contained in {source}"
            )));
        }
        let mut cols = Vec::with_capacity(self.dim());
        let mut offset = 0;
        if source.use_b {
            if self.use_b {
                cols.extend(0..4);
            }
            offset += 4;
        }
        if source.use_ifull {
            if self.use_ifull {
                cols.extend(offset..offset + self.pca_k);
            }
            offset += source.pca_k;
        }
        if source.use_icrop && self.use_icrop {
            cols.extend(offset..offset + self.pca_k);
        }
        Ok(cols)
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.use_b {
            parts.push("B");
        }
        if self.use_ifull {
            parts.push("Ifull");
        }
        if self.use_icrop {
            parts.push("Icrop");
        }
        f.write_str(&parts.join(","))
    }
}

impl FromStr for FeatureSpec {
    type Err = Error;

    /// Parses `B,Ifull,Icrop` style lists; PCA width defaults to 3.
    fn from_str(s: &str) -> Result<Self> {
        let mut spec = FeatureSpec {
            use_b: false,
            use_ifull: false,
            use_icrop: false,
            pca_k: 3,
        };
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "b" => spec.use_b = true,
                "ifull" | "i_full" => spec.use_ifull = true,
                "icrop" | "i_crop" => spec.use_icrop = true,
                other => return Err(Error::Config(format!("unknown feature family `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for FeatureSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FeatureSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One classifier sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub sample_id: String,
    pub billboard_id: String,
    pub driver_id: String,
    pub vector: Vec<f64>,
    pub label: Option<GazeClass>,
}

/// Inputs available for one detection; absent entries are fine when the
/// matching family is disabled.
#[derive(Debug, Default, Clone, Copy)]
pub struct FeatureInputs<'a> {
    pub bbox: Option<&'a NormBBox>,
    pub pca_full: Option<&'a PcaTransform>,
    pub pca_crop: Option<&'a PcaTransform>,
    pub full: Option<&'a Embedding>,
    pub crop: Option<&'a Embedding>,
}

pub fn assemble(spec: &FeatureSpec, inputs: &FeatureInputs<'_>) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut v = Vec::with_capacity(spec.dim());
    if spec.use_b {
        let nb = inputs.bbox.ok_or_else(|| Error::invalid("missing box for B features"))?;
        v.extend(nb.as_array());
    }
    for (enabled, pca, emb, name) in [
        (spec.use_ifull, inputs.pca_full, inputs.full, "I_full"),
        (spec.use_icrop, inputs.pca_crop, inputs.crop, "I_crop"),
    ] {
        if !enabled {
            continue;
        }
        let pca = pca.ok_or_else(|| Error::invalid(format!("missing PCA for {name}")))?;
        let emb = emb.ok_or_else(|| Error::invalid(format!("missing embedding for {name}")))?;
        if pca.k() < spec.pca_k {
            return Err(Error::invalid(format!(
                "PCA for {name} has {} components, spec needs {}",
                pca.k(),
                spec.pca_k
            )));
        }
        let z = pca.project(&emb.as_f64())?;
        v.extend_from_slice(&z[..spec.pca_k]);
    }
    debug_assert_eq!(v.len(), spec.dim());
    Ok(v)
}

pub fn sample_id(frame: &str, billboard_id: &str) -> String {
    format!("{frame}#{billboard_id}")
}

pub fn write_features_csv(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.vector.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["sample_id", "billboard_id", "driver_id", "label"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..d).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for r in rows {
        if r.vector.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: r.vector.len(),
            });
        }
        let mut rec = vec![
            r.sample_id.clone(),
            r.billboard_id.clone(),
            r.driver_id.clone(),
            r.label.map(|l| l.index().to_string()).unwrap_or_default(),
        ];
        rec.extend(r.vector.iter().map(|v| format!("{v:.9}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let fixed = ["sample_id", "billboard_id", "driver_id", "label"];
    let d = headers.len().saturating_sub(4);
    let ok = headers.iter().take(4).eq(fixed)
        && headers.iter().skip(4).enumerate().all(|(i, h)| h == format!("f{i}"));
    if !ok {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: "expected header `sample_id,billboard_id,driver_id,label,f0,...`".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let label = match rec[3].trim() {
            "" => None,
            s => {
                let idx: usize = s.parse().map_err(|_| perr(format!("bad label `{s}`")))?;
                Some(GazeClass::from_index(idx).map_err(|e| perr(e.to_string()))?)
            }
        };
        let vector = (0..d)
            .map(|j| {
                let s = &rec[4 + j];
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| perr(format!("bad feature value `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow {
            sample_id: rec[0].to_string(),
            billboard_id: rec[1].to_string(),
            driver_id: rec[2].to_string(),
            vector,
            label,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0) * (1.0 + j as f64)).collect())
            .collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn crop_examples() {
        let img = RgbImage::from_fn(100, 100, |x, y| Rgb([x as u8, y as u8, 0]));
        let full = crop_for_embedding(&img, &BBox::new(0.0, 0.0, 100.0, 100.0)).unwrap();
        assert_eq!(full, img);
        let c = crop_for_embedding(&img, &BBox::new(10.0, 10.0, 20.0, 20.0)).unwrap();
        assert_eq!(c.dimensions(), (10, 10));
        assert_eq!(c.get_pixel(0, 0).0, [10, 10, 0]);
        let edge = crop_for_embedding(&img, &BBox::new(70.0, 5.0, 130.0, 15.0)).unwrap();
        assert_eq!(edge.width(), 100 - 70);
        assert!(matches!(
            crop_for_embedding(&img, &BBox::new(150.0, 0.0, 160.0, 10.0)),
            Err(Error::DegenerateBox)
        ));
    }

    #[test]
    fn embed_with_stub() {
        let model = stub_embedder(5).unwrap();
        let img = RgbImage::from_fn(64, 48, |x, y| Rgb([x as u8 * 3, y as u8 * 5, 77]));
        let a = embed(&img, &model, EmbeddingSource::Full).unwrap();
        let b = embed(&img, &model, EmbeddingSource::Full).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.len(), EMBED_DIM);
        let crop = crop_for_embedding(&img, &BBox::new(4.0, 4.0, 20.0, 30.0)).unwrap();
        let c = embed(&crop, &model, EmbeddingSource::Crop).unwrap();
        assert_ne!(a.values, c.values);
        assert!(embed(&RgbImage::new(0, 0), &model, EmbeddingSource::Crop).is_err());
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        let rows = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 0.1],
            vec![0.0, -0.1],
        ];
        let p = pca_fit(&rows, 1).unwrap();
        assert!((p.components[0][0] - 1.0).abs() < 1e-12);
        assert!(p.components[0][1].abs() < 1e-12);
        // covariance diag(2/3, 0.02/3)
        assert!((p.explained_variance[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pca_exact_subspace_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let offset: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                (0..6).map(|j| offset[j] + a * basis[0][j] + b * basis[1][j]).collect()
            })
            .collect();
        let p = pca_fit(&rows, 2).unwrap();
        for r in &rows {
            let back = p.reconstruct(&p.project(r).unwrap());
            for (x, y) in r.iter().zip(&back) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn pca_projection_examples() {
        let rows = gaussian_rows(40, 8, 9);
        let p = pca_fit(&rows, 3).unwrap();
        assert!(p.project(&p.mean).unwrap().iter().all(|v| v.abs() < 1e-12));
        let shifted: Vec<f64> = p.mean.iter().zip(&p.components[0]).map(|(m, c)| m + c).collect();
        let z = p.project(&shifted).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-9 && z[1].abs() < 1e-9 && z[2].abs() < 1e-9);
        // oracle: plain matrix multiply
        let e = &rows[5];
        let z = p.project(e).unwrap();
        for i in 0..3 {
            let want: f64 = (0..8).map(|j| p.components[i][j] * (e[j] - p.mean[j])).sum();
            assert!((z[i] - want).abs() < 1e-12);
        }
        assert!(p.project(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn pca_rejects_bad_input() {
        assert!(pca_fit(&gaussian_rows(3, 5, 1), 3).is_err());
        let mut rows = gaussian_rows(10, 5, 1);
        rows[2][1] = f64::NAN;
        assert!(pca_fit(&rows, 2).is_err());
    }

    #[test]
    fn pca_is_bit_reproducible() {
        let rows = gaussian_rows(60, 12, 4);
        let a = pca_fit(&rows, 4).unwrap();
        let b = pca_fit(&rows, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn assemble_examples() {
        let nb = NormBBox { cx: 0.1, cy: 0.2, w: 0.3, h: 0.4 };
        let rows = gaussian_rows(20, EMBED_DIM, 2);
        let pca = pca_fit(&rows, 3).unwrap();
        let e = Embedding::new(rows[0].iter().map(|&v| v as f32).collect(), EmbeddingSource::Full).unwrap();
        let inputs = FeatureInputs {
            bbox: Some(&nb),
            pca_full: Some(&pca),
            pca_crop: Some(&pca),
            full: Some(&e),
            crop: Some(&e),
        };
        let b_only: FeatureSpec = "B".parse().unwrap();
        assert_eq!(assemble(&b_only, &inputs).unwrap(), vec![0.1, 0.2, 0.3, 0.4]);
        let best: FeatureSpec = "B,Ifull".parse().unwrap();
        assert_eq!(assemble(&best, &inputs).unwrap().len(), 7);
        assert_eq!(assemble(&FeatureSpec::all(3), &inputs).unwrap().len(), 10);
        let missing = FeatureInputs { full: None, ..inputs };
        assert!(assemble(&best, &missing).is_err());
    }

    #[test]
    fn assemble_length_for_all_ablation_rows() {
        let nb = NormBBox { cx: 0.5, cy: 0.5, w: 0.1, h: 0.1 };
        let rows = gaussian_rows(12, EMBED_DIM, 8);
        let pca = pca_fit(&rows, 5).unwrap();
        let e = Embedding::new(vec![0.25; EMBED_DIM], EmbeddingSource::Crop).unwrap();
        let inputs = FeatureInputs {
            bbox: Some(&nb),
            pca_full: Some(&pca),
            pca_crop: Some(&pca),
            full: Some(&e),
            crop: Some(&e),
        };
        for k in 1..=5 {
            let specs = FeatureSpec::ablation_rows(k);
            assert_eq!(specs.len(), 7);
            for s in specs {
                let v = assemble(&s, &inputs).unwrap();
                let want = 4 * s.use_b as usize + k * s.use_ifull as usize + k * s.use_icrop as usize;
                assert_eq!(v.len(), want, "{s}");
                let full = assemble(&FeatureSpec::all(k), &inputs).unwrap();
                let cols = s.columns_within(&FeatureSpec::all(k)).unwrap();
                let picked: Vec<f64> = cols.iter().map(|&c| full[c]).collect();
                assert_eq!(picked, v);
            }
        }
    }

    #[test]
    fn feature_spec_parsing() {
        let s: FeatureSpec = "B,Ifull".parse().unwrap();
        assert!(s.use_b && s.use_ifull && !s.use_icrop);
        assert_eq!(s.to_string(), "B,Ifull");
        assert!("".parse::<FeatureSpec>().is_err());
        assert!("B,Ifoo".parse::<FeatureSpec>().is_err());
        let narrow: FeatureSpec = "Icrop".parse().unwrap();
        assert!(FeatureSpec::all(3).columns_within(&narrow).is_err());
    }

    #[test]
    fn features_csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let rows = vec![
            FeatureRow {
                sample_id: "a.png#7".into(),
                billboard_id: "7".into(),
                driver_id: "d1".into(),
                vector: vec![0.5, -1.25],
                label: Some(GazeClass::Long),
            },
            FeatureRow {
                sample_id: "b.png#7".into(),
                billboard_id: "7".into(),
                driver_id: "d2".into(),
                vector: vec![0.0, 1.0 / 3.0],
                label: None,
            },
        ];
        write_features_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "sample_id,billboard_id,driver_id,label,f0,f1\na.png#7,7,d1,2,0.500000000,-1.250000000\nb.png#7,7,d2,,0.000000000,0.333333333\n"
        ));
        let back = read_features_csv(&path).unwrap();
        assert_eq!(back[0], rows[0]);
        assert_eq!(back[1].label, None);
    }

    proptest! {
        #[test]
        fn pca_invariants(seed in 0u64..1000, n in 8usize..40, d in 2usize..10, k in 1usize..4) {
            prop_assume!(k < n && k <= d);
            let rows = gaussian_rows(n, d, seed);
            let p = pca_fit(&rows, k).unwrap();
            for i in 0..k {
                for j in 0..k {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot(&p.components[i], &p.components[j]) - want).abs() < 1e-6);
                }
            }
            for w in p.explained_variance.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            for r in &rows {
                let z = p.project(r).unwrap();
                let zn = dot(&z, &z).sqrt();
                let centered: Vec<f64> = r.iter().zip(&p.mean).map(|(a, b)| a - b).collect();
                prop_assert!(zn <= dot(&centered, &centered).sqrt() + 1e-6);
            }
        }
    }
}
