// SPDX-License-Identifier: Apache-2.0

//! Pipeline configuration: TOML file, then `BGZ_` environment overrides, then
//! command-line flags.
//!
//! An environment variable `BGZ_SECTION__KEY=value` sets `[section] key`;
//! top-level keys drop the section (`BGZ_BACKEND=stub`). Values are parsed as
//! TOML scalars and fall back to strings. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{load_model, BackendKind, ModelHandle};
use crate::classifier::SearchSpace;
use crate::detector::{stub_detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::features::{stub_embedder, FeatureSpec};

pub const ENV_PREFIX: &str = "BGZ_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// Families fed to the classifier, e.g. `B,Ifull`.
    pub spec: FeatureSpec,
    pub pca_k: usize,
    /// Frames kept per (billboard, driver).
    pub top_n: usize,
    /// IoU floor for tying detections to billboard instances.
    pub assoc_iou: f64,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            spec: FeatureSpec::all(3),
            pca_k: 3,
            top_n: 10,
            assoc_iou: 0.5,
        }
    }
}

impl FeaturesConfig {
    pub fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec {
            pca_k: self.pca_k,
            ..self.spec
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub folds: usize,
    pub seed: u64,
    pub search: SearchSpace,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 42,
            search: SearchSpace::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub backend: BackendKind,
    pub stub_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detector_model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedder_model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_root: Option<PathBuf>,
    /// Defaults to `<dataset_root>/test_billboards.txt`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_split_file: Option<PathBuf>,
    pub detector: DetectorConfig,
    pub features: FeaturesConfig,
    pub classifier: ClassifierConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Stub,
            stub_seed: 7,
            detector_model: None,
            embedder_model: None,
            dataset_root: None,
            test_split_file: None,
            detector: DetectorConfig::default(),
            features: FeaturesConfig::default(),
            classifier: ClassifierConfig::default(),
        }
    }
}

fn cfg_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn parse_scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl PipelineConfig {
    /// Parse TOML text and apply `(name, value)` environment overrides.
    pub fn from_toml_with_env<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = toml::from_str(text).map_err(cfg_err)?;
        let mut vars: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        vars.sort();
        for (name, raw) in vars {
            let path: Vec<String> = name[ENV_PREFIX.len()..]
                .split("__")
                .map(str::to_ascii_lowercase)
                .collect();
            if path.iter().any(String::is_empty) {
                return Err(Error::Config(format!("malformed override `{name}`")));
            }
            let mut node = &mut table;
            for key in &path[..path.len() - 1] {
                let entry = node
                    .entry(key.clone())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                node = entry
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("override `{name}`: `{key}` is not a section")))?;
            }
            node.insert(path[path.len() - 1].clone(), parse_scalar(&raw));
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(cfg_err)?;
        cfg.normalized()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_env(text, std::iter::empty())
    }

    /// Read an optional config file and apply the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) if !p.exists() => return Err(Error::MissingFile(p.to_path_buf())),
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml_with_env(&text, std::env::vars())
    }

    fn normalized(mut self) -> Result<Self> {
        self.features.spec.pca_k = self.features.pca_k;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.features.feature_spec().validate()?;
        if self.features.pca_k == 0 {
            return Err(Error::Config("features.pca_k must be at least 1".into()));
        }
        if self.features.top_n == 0 {
            return Err(Error::Config("features.top_n must be at least 1".into()));
        }
        if !(self.features.assoc_iou > 0.0 && self.features.assoc_iou <= 1.0) {
            return Err(Error::Config("features.assoc_iou must be in (0, 1]".into()));
        }
        if self.classifier.folds < 2 {
            return Err(Error::Config("classifier.folds must be at least 2".into()));
        }
        self.classifier.search.validate()?;
        if self.backend == BackendKind::GraphRuntime
            && (self.detector_model.is_none() || self.embedder_model.is_none())
        {
            return Err(Error::Config(
                "graph_runtime backend needs detector_model and embedder_model".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(cfg_err)
    }

    pub fn dataset_root(&self) -> Result<&Path> {
        self.dataset_root
            .as_deref()
            .ok_or_else(|| Error::Config("dataset_root is not set".into()))
    }

    pub fn split_file(&self) -> Result<PathBuf> {
        match &self.test_split_file {
            Some(p) => Ok(p.clone()),
            None => Ok(self.dataset_root()?.join("test_billboards.txt")),
        }
    }

    /// Detector graph, or the built-in stub when no model path is given.
    pub fn load_detector(&self) -> Result<ModelHandle> {
        match (&self.detector_model, self.backend) {
            (Some(p), kind) => load_model(p, kind),
            (None, BackendKind::Stub) => stub_detector(self.detector.input_size, self.stub_seed),
            (None, BackendKind::GraphRuntime) => Err(Error::Config("detector_model is not set".into())),
        }
    }

    pub fn load_embedder(&self) -> Result<ModelHandle> {
        match (&self.embedder_model, self.backend) {
            (Some(p), kind) => load_model(p, kind),
            (None, BackendKind::Stub) => stub_embedder(self.stub_seed.wrapping_add(1)),
            (None, BackendKind::GraphRuntime) => Err(Error::Config("embedder_model is not set".into())),
        }
    }
}
