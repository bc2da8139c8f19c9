// SPDX-License-Identifier: Apache-2.0

//! Opaque tensor functions behind a [`ModelHandle`].
//!
//! Two engines exist: a graph runtime that executes serialized ONNX graphs
//! (feature `onnx`) and a deterministic stub whose outputs are pseudo-random
//! values seeded by a hash of the input bytes. The stub lets the whole
//! pipeline run in tests with no model weights.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Named f32 tensors, ordered by name.
pub type Tensors = BTreeMap<String, ArrayD<f32>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[serde(alias = "onnx")]
    GraphRuntime,
    Stub,
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph_runtime" | "onnx" => Ok(BackendKind::GraphRuntime),
            "stub" => Ok(BackendKind::Stub),
            other => Err(Error::Config(format!("unknown backend `{other}`"))),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::GraphRuntime => "graph_runtime",
            BackendKind::Stub => "stub",
        })
    }
}

/// Name and shape of a graph input or output. `-1` marks a dynamic dim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<i64>,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, shape: Vec<i64>) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            shape,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.shape.is_empty() {
            return Err(Error::invalid(format!("tensor `{}` has rank 0", self.name)));
        }
        if self.shape.iter().filter(|&&d| d < 0).count() > 1 {
            return Err(Error::invalid(format!(
                "tensor `{}` has more than one dynamic dim",
                self.name
            )));
        }
        if self.shape.iter().any(|&d| d == 0 || d < -1) {
            return Err(Error::invalid(format!(
                "tensor `{}` has invalid dims {:?}",
                self.name, self.shape
            )));
        }
        Ok(())
    }

    /// Whether a concrete shape unifies with this spec.
    pub fn conforms(&self, shape: &[usize]) -> bool {
        shape.len() == self.shape.len()
            && self
                .shape
                .iter()
                .zip(shape)
                .all(|(&want, &got)| want < 0 || want as usize == got)
    }

    fn check(&self, t: &ArrayD<f32>) -> Result<()> {
        if self.conforms(t.shape()) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                name: self.name.clone(),
                expected: self.shape.clone(),
                actual: t.shape().to_vec(),
            })
        }
    }
}

/// Value distribution of one stub output: uniform in `[lo, hi)`, optionally
/// with a separate range per index along `channel_axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubOutput {
    #[serde(flatten)]
    pub spec: TensorSpec,
    #[serde(default)]
    pub channel_axis: Option<usize>,
    #[serde(default = "default_ranges")]
    pub ranges: Vec<(f32, f32)>,
}

fn default_ranges() -> Vec<(f32, f32)> {
    vec![(0.0, 1.0)]
}

impl StubOutput {
    pub fn uniform(spec: TensorSpec, lo: f32, hi: f32) -> Self {
        Self {
            spec,
            channel_axis: None,
            ranges: vec![(lo, hi)],
        }
    }

    pub fn per_channel(spec: TensorSpec, axis: usize, ranges: Vec<(f32, f32)>) -> Self {
        Self {
            spec,
            channel_axis: Some(axis),
            ranges,
        }
    }
}

/// On-disk description of a stub model (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubDescription {
    #[serde(default)]
    pub seed: u64,
    pub inputs: Vec<TensorSpec>,
    pub outputs: Vec<StubOutput>,
}

#[derive(Debug, Clone)]
struct StubEngine {
    seed: u64,
    outputs: Vec<StubOutput>,
}

impl StubEngine {
    fn forward(&self, inputs: &Tensors) -> Result<Tensors> {
        let mut hasher = Sha256::new();
        hasher.update(b"bgz-stub");
        hasher.update(self.seed.to_le_bytes());
        for (name, t) in inputs {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            for &d in t.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            hasher.update(&buf);
        }
        let input_digest = hasher.finalize();
        // dynamic output dims follow the first dynamic input dim
        let dyn_dim = inputs
            .values()
            .next()
            .and_then(|t| t.shape().first().copied())
            .unwrap_or(1);

        let mut out = Tensors::new();
        for o in &self.outputs {
            let mut h = Sha256::new();
            h.update(input_digest);
            h.update(o.spec.name.as_bytes());
            let seed: [u8; 32] = h.finalize().into();
            let mut rng = ChaCha8Rng::from_seed(seed);
            let shape: Vec<usize> = o
                .spec
                .shape
                .iter()
                .map(|&d| if d < 0 { dyn_dim } else { d as usize })
                .collect();
            // row-major fill; the channel of flat index i is (i / inner) % dim
            let (inner, dim) = match o.channel_axis {
                Some(axis) => (shape[axis + 1..].iter().product::<usize>(), shape[axis]),
                None => (1, 1),
            };
            let mut arr = ArrayD::<f32>::zeros(shape);
            for (i, v) in arr.iter_mut().enumerate() {
                let range_ix = ((i / inner) % dim).min(o.ranges.len() - 1);
                let (lo, hi) = o.ranges[range_ix];
                let u: f32 = rng.random();
                *v = lo + (hi - lo) * u;
            }
            out.insert(o.spec.name.clone(), arr);
        }
        Ok(out)
    }
}

#[cfg(feature = "onnx")]
mod graph {
    use std::sync::Arc;

    use tract_onnx::prelude::*;

    use super::{TensorSpec, Tensors};
    use crate::error::{Error, Result};

    fn backend_err(e: impl std::fmt::Display) -> Error {
        Error::Backend(format!("{e:#}"))
    }

    pub(super) struct GraphEngine {
        plan: Arc<TypedRunnableModel>,
        input_names: Vec<String>,
        output_names: Vec<String>,
    }

    impl std::fmt::Debug for GraphEngine {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            f.debug_struct("GraphEngine")
                .field("inputs", &self.input_names)
                .field("outputs", &self.output_names)
                .finish()
        }
    }

    fn spec_of(name: String, fact: &TypedFact) -> Result<TensorSpec> {
        if fact.datum_type != f32::datum_type() {
            return Err(Error::Backend(format!(
                "unsupported dtype {:?} for `{name}`",
                fact.datum_type
            )));
        }
        let shape = fact
            .shape
            .iter()
            .map(|d| d.as_i64().unwrap_or(-1))
            .collect();
        TensorSpec::new(name, shape)
    }

    pub(super) fn load(
        path: &std::path::Path,
    ) -> Result<(GraphEngine, Vec<TensorSpec>, Vec<TensorSpec>)> {
        let model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                msg: format!("{e:#}"),
            })?;
        let typed = model.into_typed().map_err(backend_err)?;
        let mut inputs = Vec::new();
        for (i, outlet) in typed.input_outlets().map_err(backend_err)?.iter().enumerate() {
            let name = typed.node(outlet.node).name.clone();
            inputs.push(spec_of(name, typed.input_fact(i).map_err(backend_err)?)?);
        }
        let mut outputs = Vec::new();
        for (i, outlet) in typed.output_outlets().map_err(backend_err)?.iter().enumerate() {
            let name = typed
                .outlet_label(*outlet)
                .map(str::to_string)
                .unwrap_or_else(|| typed.node(outlet.node).name.clone());
            outputs.push(spec_of(name, typed.output_fact(i).map_err(backend_err)?)?);
        }
        let plan = typed
            .into_optimized()
            .map_err(backend_err)?
            .into_runnable()
            .map_err(backend_err)?;
        let engine = GraphEngine {
            plan,
            input_names: inputs.iter().map(|s| s.name.clone()).collect(),
            output_names: outputs.iter().map(|s| s.name.clone()).collect(),
        };
        Ok((engine, inputs, outputs))
    }

    impl GraphEngine {
        pub(super) fn forward(&self, inputs: &Tensors) -> Result<Tensors> {
            let mut values: TVec<TValue> = tvec!();
            for name in &self.input_names {
                let arr = inputs
                    .get(name)
                    .ok_or_else(|| Error::invalid(format!("missing input `{name}`")))?;
                values.push(Tensor::from(arr.clone()).into_tvalue());
            }
            let outs = self.plan.run(values).map_err(backend_err)?;
            let mut result = Tensors::new();
            for (name, v) in self.output_names.iter().zip(outs.iter()) {
                let view = v.to_plain_array_view::<f32>().map_err(backend_err)?;
                result.insert(name.clone(), view.to_owned());
            }
            Ok(result)
        }
    }
}

#[derive(Debug)]
enum Engine {
    Stub(StubEngine),
    #[cfg(feature = "onnx")]
    Graph(graph::GraphEngine),
}

/// A loaded model: declared input/output specs plus the engine that runs it.
#[derive(Debug)]
pub struct ModelHandle {
    pub input_specs: Vec<TensorSpec>,
    pub output_specs: Vec<TensorSpec>,
    pub kind: BackendKind,
    engine: Engine,
}

impl ModelHandle {
    /// Deterministic stub with the given declared specs.
    pub fn stub(inputs: Vec<TensorSpec>, outputs: Vec<StubOutput>, seed: u64) -> Result<Self> {
        if inputs.is_empty() || outputs.is_empty() {
            return Err(Error::invalid("stub model needs at least one input and output"));
        }
        for o in &outputs {
            if o.ranges.is_empty() {
                return Err(Error::invalid(format!("stub output `{}` has no ranges", o.spec.name)));
            }
            if let Some(axis) = o.channel_axis {
                if axis >= o.spec.shape.len() {
                    return Err(Error::invalid(format!(
                        "stub output `{}` channel axis {axis} out of range",
                        o.spec.name
                    )));
                }
            }
        }
        Ok(Self {
            input_specs: inputs,
            output_specs: outputs.iter().map(|o| o.spec.clone()).collect(),
            kind: BackendKind::Stub,
            engine: Engine::Stub(StubEngine { seed, outputs }),
        })
    }

    pub fn from_stub_description(desc: StubDescription) -> Result<Self> {
        for s in &desc.inputs {
            s.validate()?;
        }
        for o in &desc.outputs {
            o.spec.validate()?;
        }
        Self::stub(desc.inputs, desc.outputs, desc.seed)
    }

    /// Run the model. Inputs and outputs are validated against the specs.
    pub fn forward(&self, inputs: &Tensors) -> Result<Tensors> {
        for spec in &self.input_specs {
            let t = inputs
                .get(&spec.name)
                .ok_or_else(|| Error::invalid(format!("missing input `{}`", spec.name)))?;
            spec.check(t)?;
        }
        let outputs = match &self.engine {
            Engine::Stub(s) => s.forward(inputs)?,
            #[cfg(feature = "onnx")]
            Engine::Graph(g) => g.forward(inputs)?,
        };
        for spec in &self.output_specs {
            let t = outputs
                .get(&spec.name)
                .ok_or_else(|| Error::Backend(format!("missing output `{}`", spec.name)))?;
            spec.check(t)?;
        }
        Ok(outputs)
    }

    /// Convenience for single-input models.
    pub fn forward_single(&self, input: ArrayD<f32>) -> Result<Tensors> {
        let name = self.input_specs[0].name.clone();
        self.forward(&Tensors::from([(name, input)]))
    }
}

/// Load a model file. For [`BackendKind::GraphRuntime`] the file is an ONNX
/// graph; for [`BackendKind::Stub`] it is a TOML [`StubDescription`].
pub fn load_model(path: &Path, kind: BackendKind) -> Result<ModelHandle> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    match kind {
        BackendKind::Stub => {
            let text = std::fs::read_to_string(path)?;
            let desc: StubDescription = toml::from_str(&text).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
            ModelHandle::from_stub_description(desc)
        }
        #[cfg(feature = "onnx")]
        BackendKind::GraphRuntime => {
            let (engine, input_specs, output_specs) = graph::load(path)?;
            if input_specs.is_empty() || output_specs.is_empty() {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    msg: "graph declares no inputs or outputs".into(),
                });
            }
            Ok(ModelHandle {
                input_specs,
                output_specs,
                kind,
                engine: Engine::Graph(engine),
            })
        }
        #[cfg(not(feature = "onnx"))]
        BackendKind::GraphRuntime => Err(Error::Backend(
            "built without the `onnx` feature".to_string(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn toy_stub(seed: u64) -> ModelHandle {
        ModelHandle::stub(
            vec![TensorSpec::new("x", vec![1, 4]).unwrap()],
            vec![StubOutput::per_channel(
                TensorSpec::new("y", vec![1, 3, 5]).unwrap(),
                1,
                vec![(0.0, 10.0), (-1.0, 0.0), (5.0, 6.0)],
            )],
            seed,
        )
        .unwrap()
    }

    fn input(v: f32) -> ArrayD<f32> {
        ArrayD::from_elem(IxDyn(&[1, 4]), v)
    }

    #[test]
    fn stub_is_deterministic_and_input_sensitive() {
        let m = toy_stub(7);
        let a = m.forward_single(input(0.0)).unwrap();
        let b = m.forward_single(input(0.0)).unwrap();
        assert_eq!(a, b);
        let c = m.forward_single(input(1.0)).unwrap();
        assert_ne!(a, c);
        let other_seed = toy_stub(8).forward_single(input(0.0)).unwrap();
        assert_ne!(a, other_seed);
    }

    #[test]
    fn stub_respects_channel_ranges() {
        let out = toy_stub(1).forward_single(input(0.5)).unwrap();
        let y = &out["y"];
        for ((_, c, _), &v) in y.view().into_dimensionality::<ndarray::Ix3>().unwrap().indexed_iter() {
            let (lo, hi) = [(0.0, 10.0), (-1.0, 0.0), (5.0, 6.0)][c];
            assert!(v >= lo && v < hi, "channel {c} value {v}");
        }
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let m = toy_stub(1);
        let bad = ArrayD::zeros(IxDyn(&[1, 5]));
        assert!(matches!(
            m.forward_single(bad),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(TensorSpec::new("a", vec![]).is_err());
        assert!(TensorSpec::new("a", vec![-1, -1, 3]).is_err());
        let s = TensorSpec::new("a", vec![-1, 3]).unwrap();
        assert!(s.conforms(&[7, 3]));
        assert!(!s.conforms(&[7, 4]));
        assert!(!s.conforms(&[3]));
    }

    #[test]
    fn dynamic_output_dim_follows_batch() {
        let m = ModelHandle::stub(
            vec![TensorSpec::new("x", vec![-1, 2]).unwrap()],
            vec![StubOutput::uniform(TensorSpec::new("y", vec![-1, 3]).unwrap(), 0.0, 1.0)],
            0,
        )
        .unwrap();
        let out = m.forward_single(ArrayD::zeros(IxDyn(&[4, 2]))).unwrap();
        assert_eq!(out["y"].shape(), &[4, 3]);
    }

    #[test]
    fn load_stub_description_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stub.toml");
        std::fs::write(
            &path,
            r#"
seed = 3
[[inputs]]
name = "images"
shape = [1, 3, 32, 32]
[[outputs]]
name = "output0"
shape = [1, 5, 21]
channel_axis = 1
ranges = [[0.0, 32.0], [0.0, 32.0], [0.0, 8.0], [0.0, 8.0], [0.0, 1.0]]
"#,
        )
        .unwrap();
        let m = load_model(&path, BackendKind::Stub).unwrap();
        assert_eq!(m.kind, BackendKind::Stub);
        assert_eq!(m.output_specs[0].shape, vec![1, 5, 21]);
        assert!(matches!(
            load_model(&dir.path().join("nope.onnx"), BackendKind::GraphRuntime),
            Err(Error::MissingFile(_))
        ));
    }
}
