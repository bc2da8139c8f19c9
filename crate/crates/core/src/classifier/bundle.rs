// SPDX-License-Identifier: Apache-2.0

//! Single-file model bundle.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "BGZM1"                     5 bytes
//! section_count               u32
//! section*                    tag [u8; 4], payload_len u64, payload
//! ```
//!
//! | tag    | payload |
//! |--------|---------|
//! | `SPEC` | u8 family bits (B = 1, Ifull = 2, Icrop = 4), u32 pca_k |
//! | `STDZ` | u32 d, d × f64 mean, d × f64 std |
//! | `PCAF` | full-frame PCA: u32 d, u32 k, d × f64 mean, k·d × f64 components, k × f64 variance |
//! | `PCAC` | crop PCA, same layout |
//! | `PRIO` | 3 × f64 class priors |
//! | `MEMB` | one per member, in order: u8 kind, f64 weight, body |
//!
//! Softmax body: f64 l2, u32 d, 3·d × f64 weights (row-major), 3 × f64 bias.
//! GBDT body: f64 lr, u32 rounds, u32 d, 3 × f64 init, then per round and class
//! a tree: u32 node_count and nodes (u8 0 + f64 leaf, or u8 1 + u32 feature +
//! f64 threshold + u32 left + u32 right).
//!
//! Unknown tags are skipped on read.

use std::fs;
use std::path::Path;

use serde_json::json;

use crate::error::{Error, Result};
use crate::features::{FeatureSpec, PcaTransform};

use super::{CvReport, EnsembleModel, GbdtModel, Member, Node, SoftmaxModel, Standardizer, Tree};

pub const BUNDLE_MAGIC: &[u8; 5] = b"BGZM1";

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    ctx: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format {
            path: self.ctx.into(),
            msg: "truncated bundle".into(),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn f64x3(&mut self) -> Result<[f64; 3]> {
        Ok([self.f64()?, self.f64()?, self.f64()?])
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
    fn bad(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.ctx.into(),
            msg: msg.into(),
        }
    }
}

fn put_pca(w: &mut Writer, p: &PcaTransform) {
    w.u32(p.dim());
    w.u32(p.k());
    w.f64s(&p.mean);
    for c in &p.components {
        w.f64s(c);
    }
    w.f64s(&p.explained_variance);
}

fn get_pca(r: &mut Reader) -> Result<PcaTransform> {
    let d = r.u32()?;
    let k = r.u32()?;
    let mean = r.f64s(d)?;
    let components = (0..k).map(|_| r.f64s(d)).collect::<Result<_>>()?;
    let explained_variance = r.f64s(k)?;
    Ok(PcaTransform {
        mean,
        components,
        explained_variance,
    })
}

fn put_tree(w: &mut Writer, t: &Tree) {
    w.u32(t.nodes.len());
    for n in &t.nodes {
        match n {
            Node::Leaf(v) => {
                w.u8(0);
                w.f64(*v);
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                w.u8(1);
                w.u32(*feature);
                w.f64(*threshold);
                w.u32(*left);
                w.u32(*right);
            }
        }
    }
}

fn get_tree(r: &mut Reader, d: usize) -> Result<Tree> {
    let n = r.u32()?;
    let mut nodes = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        nodes.push(match r.u8()? {
            0 => Node::Leaf(r.f64()?),
            1 => {
                let (feature, threshold, left, right) = (r.u32()?, r.f64()?, r.u32()?, r.u32()?);
                if feature >= d || left >= n || right >= n {
                    return Err(r.bad("tree node index out of range"));
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                }
            }
            t => return Err(r.bad(format!("unknown tree node tag {t}"))),
        });
    }
    if nodes.is_empty() {
        return Err(r.bad("empty tree"));
    }
    Ok(Tree { nodes })
}

fn put_member(w: &mut Writer, m: &Member, weight: f64) {
    match m {
        Member::Softmax(s) => {
            w.u8(0);
            w.f64(weight);
            w.f64(s.l2);
            w.u32(s.dim());
            for row in &s.weights {
                w.f64s(row);
            }
            w.f64s(&s.bias);
        }
        Member::Gbdt(g) => {
            w.u8(1);
            w.f64(weight);
            w.f64(g.learning_rate);
            w.u32(g.n_rounds);
            w.u32(g.n_features);
            w.f64s(&g.init);
            for round in &g.trees {
                for t in round {
                    put_tree(w, t);
                }
            }
        }
    }
}

fn get_member(r: &mut Reader) -> Result<(Member, f64)> {
    let kind = r.u8()?;
    let weight = r.f64()?;
    let m = match kind {
        0 => {
            let l2 = r.f64()?;
            let d = r.u32()?;
            let weights = (0..3).map(|_| r.f64s(d)).collect::<Result<_>>()?;
            Member::Softmax(SoftmaxModel {
                weights,
                bias: r.f64x3()?,
                l2,
            })
        }
        1 => {
            let learning_rate = r.f64()?;
            let n_rounds = r.u32()?;
            let n_features = r.u32()?;
            let init = r.f64x3()?;
            let trees = (0..n_rounds)
                .map(|_| Ok([get_tree(r, n_features)?, get_tree(r, n_features)?, get_tree(r, n_features)?]))
                .collect::<Result<_>>()?;
            Member::Gbdt(GbdtModel {
                init,
                trees,
                learning_rate,
                n_rounds,
                n_features,
                loss_history: Vec::new(),
            })
        }
        k => return Err(r.bad(format!("unknown member kind {k}"))),
    };
    Ok((m, weight))
}

fn section(out: &mut Writer, count: &mut usize, tag: &[u8; 4], body: Writer) {
    out.0.extend_from_slice(tag);
    out.0.extend_from_slice(&(body.0.len() as u64).to_le_bytes());
    out.0.extend_from_slice(&body.0);
    *count += 1;
}

/// Serialize a validated model.
pub fn encode_bundle(model: &EnsembleModel) -> Result<Vec<u8>> {
    model.validate()?;
    let mut body = Writer::default();
    let mut n = 0;

    let mut w = Writer::default();
    let s = &model.feature_spec;
    w.u8(s.use_b as u8 | (s.use_ifull as u8) << 1 | (s.use_icrop as u8) << 2);
    w.u32(s.pca_k);
    section(&mut body, &mut n, b"SPEC", w);

    let mut w = Writer::default();
    w.u32(model.standardizer.mean.len());
    w.f64s(&model.standardizer.mean);
    w.f64s(&model.standardizer.std);
    section(&mut body, &mut n, b"STDZ", w);

    for (tag, pca) in [(b"PCAF", &model.pca_full), (b"PCAC", &model.pca_crop)] {
        if let Some(p) = pca {
            let mut w = Writer::default();
            put_pca(&mut w, p);
            section(&mut body, &mut n, tag, w);
        }
    }

    let mut w = Writer::default();
    w.f64s(&model.class_priors);
    section(&mut body, &mut n, b"PRIO", w);

    for (m, weight) in &model.members {
        let mut w = Writer::default();
        put_member(&mut w, m, *weight);
        section(&mut body, &mut n, b"MEMB", w);
    }

    let mut out = BUNDLE_MAGIC.to_vec();
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&body.0);
    Ok(out)
}

/// Parse bundle bytes. `ctx` names the source in error messages.
pub fn decode_bundle(bytes: &[u8], ctx: &str) -> Result<EnsembleModel> {
    let mut r = Reader { buf: bytes, pos: 0, ctx };
    if r.take(5).ok() != Some(&BUNDLE_MAGIC[..]) {
        return Err(r.bad("not a BGZM1 model bundle"));
    }
    let count = r.u32()?;
    let mut spec = None;
    let mut standardizer = None;
    let (mut pca_full, mut pca_crop, mut priors) = (None, None, None);
    let mut members = Vec::new();
    for _ in 0..count {
        let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
        let len = r.u64()?;
        let payload = r.take(len)?;
        let mut s = Reader { buf: payload, pos: 0, ctx };
        match &tag {
            b"SPEC" => {
                let bits = s.u8()?;
                spec = Some(FeatureSpec::new(bits & 1 != 0, bits & 2 != 0, bits & 4 != 0, s.u32()?)?);
            }
            b"STDZ" => {
                let d = s.u32()?;
                standardizer = Some(Standardizer {
                    mean: s.f64s(d)?,
                    std: s.f64s(d)?,
                });
            }
            b"PCAF" => pca_full = Some(get_pca(&mut s)?),
            b"PCAC" => pca_crop = Some(get_pca(&mut s)?),
            b"PRIO" => priors = Some(s.f64x3()?),
            b"MEMB" => members.push(get_member(&mut s)?),
            _ => continue,
        }
        if !s.done() {
            return Err(r.bad(format!("trailing bytes in section {}", String::from_utf8_lossy(&tag))));
        }
    }
    if !r.done() {
        return Err(r.bad("trailing bytes after last section"));
    }
    let missing = |what: &str| r.bad(format!("missing {what} section"));
    let model = EnsembleModel {
        members,
        standardizer: standardizer.ok_or_else(|| missing("STDZ"))?,
        pca_full,
        pca_crop,
        feature_spec: spec.ok_or_else(|| missing("SPEC"))?,
        class_priors: priors.ok_or_else(|| missing("PRIO"))?,
    };
    model.validate()?;
    Ok(model)
}

pub fn write_bundle(path: &Path, model: &EnsembleModel) -> Result<()> {
    fs::write(path, encode_bundle(model)?)?;
    Ok(())
}

pub fn read_bundle(path: &Path) -> Result<EnsembleModel> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_bundle(&fs::read(path)?, &path.display().to_string())
}

/// Human-readable JSON summary written next to a bundle.
pub fn bundle_summary(model: &EnsembleModel, cv: Option<&CvReport>) -> serde_json::Value {
    let members: Vec<_> = model
        .members
        .iter()
        .map(|(m, w)| match m {
            Member::Softmax(s) => json!({"kind": "softmax", "weight": w, "l2": s.l2}),
            Member::Gbdt(g) => json!({
                "kind": "gbdt",
                "weight": w,
                "rounds": g.n_rounds,
                "learning_rate": g.learning_rate,
                "max_depth": g.trees.iter().flatten().map(Tree::depth).max().unwrap_or(0),
            }),
        })
        .collect();
    let pca = |p: &Option<PcaTransform>| p.as_ref().map(|p| json!({"k": p.k(), "explained_variance": p.explained_variance}));
    json!({
        "format": "BGZM1",
        "feature_spec": model.feature_spec.to_string(),
        "pca_k": model.feature_spec.pca_k,
        "dim": model.dim(),
        "class_priors": model.class_priors,
        "members": members,
        "pca_full": pca(&model.pca_full),
        "pca_crop": pca(&model.pca_crop),
        "cv": cv,
    })
}
