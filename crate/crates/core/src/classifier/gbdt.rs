// SPDX-License-Identifier: Apache-2.0

//! Multiclass gradient boosting with second-order (Newton) trees over
//! quantile-binned features.
//!
//! Each round fits one regression tree per class to the gradient and hessian
//! of the softmax cross-entropy. The round is then applied with the largest
//! step in `lr, lr/2, lr/4, ...` that does not raise the training loss (or
//! with step 0), so the training loss is non-increasing by construction.

use crate::error::{Error, Result};
use crate::geometry::GazeClass;

use super::softmax3;

const MAX_BINS: usize = 64;
const LAMBDA: f64 = 1.0;
const MIN_CHILD_HESSIAN: f64 = 1e-3;
const PRIOR_FLOOR: f64 = 1e-6;
const MAX_HALVINGS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(f64),
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Regression tree stored as a flat node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf(v) = n {
                *v *= s;
            }
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf(_) => None,
            })
            .max()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbdtParams {
    pub depth: usize,
    pub rounds: usize,
    pub lr: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            depth: 3,
            rounds: 100,
            lr: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    /// Log prior per class.
    pub init: [f64; 3],
    /// `trees[round][class]`.
    pub trees: Vec<[Tree; 3]>,
    pub learning_rate: f64,
    pub n_rounds: usize,
    pub n_features: usize,
    /// Weighted training log-loss before round 1 and after every round.
    pub loss_history: Vec<f64>,
}

impl GbdtModel {
    pub fn raw(&self, x: &[f64]) -> [f64; 3] {
        let mut f = self.init;
        for round in &self.trees {
            for k in 0..3 {
                f[k] += round[k].predict(x);
            }
        }
        f
    }

    pub fn predict_proba(&self, x: &[f64]) -> [f64; 3] {
        softmax3(&self.raw(x))
    }
}

/// Quantile cut points per feature; `bin(x) = #{cuts < x}`.
struct Binned {
    cuts: Vec<Vec<f64>>,
    bins: Vec<Vec<u8>>, // [feature][sample]
}

impl Binned {
    fn new(x: &[Vec<f64>]) -> Self {
        let d = x[0].len();
        let n = x.len();
        let mut cuts = Vec::with_capacity(d);
        let mut bins = Vec::with_capacity(d);
        for f in 0..d {
            let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            let c: Vec<f64> = if vals.len() <= MAX_BINS {
                vals.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let mut c: Vec<f64> = (1..MAX_BINS)
                    .map(|i| {
                        let j = i * vals.len() / MAX_BINS;
                        0.5 * (vals[j - 1] + vals[j])
                    })
                    .collect();
                c.dedup();
                c
            };
            bins.push(
                (0..n)
                    .map(|i| c.partition_point(|&t| t < x[i][f]) as u8)
                    .collect(),
            );
            cuts.push(c);
        }
        Self { cuts, bins }
    }
}

struct TreeBuilder<'a> {
    binned: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    max_depth: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let g: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = idx.iter().map(|&i| self.hess[i]).sum();
        let node_id = self.nodes.len();
        self.nodes.push(Node::Leaf(-g / (h + LAMBDA)));
        if depth >= self.max_depth || idx.len() < 2 {
            return node_id;
        }
        let parent_score = g * g / (h + LAMBDA);
        let mut best: Option<(f64, usize, usize)> = None;
        for (f, cuts) in self.binned.cuts.iter().enumerate() {
            if cuts.is_empty() {
                continue;
            }
            let nb = cuts.len() + 1;
            let mut hg = vec![0.0; nb];
            let mut hh = vec![0.0; nb];
            for &i in &idx {
                let b = self.binned.bins[f][i] as usize;
                hg[b] += self.grad[i];
                hh[b] += self.hess[i];
            }
            let (mut gl, mut hl) = (0.0, 0.0);
            for b in 0..nb - 1 {
                gl += hg[b];
                hl += hh[b];
                let (gr, hr) = (g - gl, h - hl);
                if hl < MIN_CHILD_HESSIAN || hr < MIN_CHILD_HESSIAN {
                    continue;
                }
                let gain = gl * gl / (hl + LAMBDA) + gr * gr / (hr + LAMBDA) - parent_score;
                if gain > 1e-12 && best.is_none_or(|(bg, _, _)| gain > bg) {
                    best = Some((gain, f, b));
                }
            }
        }
        let Some((_, feature, bin)) = best else {
            return node_id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| (self.binned.bins[feature][i] as usize) <= bin);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[node_id] = Node::Split {
            feature,
            threshold: self.binned.cuts[feature][bin],
            left,
            right,
        };
        node_id
    }
}

fn weighted_log_loss(f: &[[f64; 3]], y: &[GazeClass], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    f.iter()
        .zip(y)
        .zip(w)
        .map(|((fi, yi), wi)| -wi * softmax3(fi)[yi.index()].max(1e-300).ln())
        .sum::<f64>()
        / total
}

pub fn gbdt_fit(x: &[Vec<f64>], y: &[GazeClass], w: &[f64], params: &GbdtParams) -> Result<GbdtModel> {
    if params.rounds == 0 {
        return Err(Error::invalid("gbdt_fit: rounds must be at least 1"));
    }
    if x.is_empty() || x.len() != y.len() || x.len() != w.len() {
        return Err(Error::invalid("gbdt_fit: inconsistent training data"));
    }
    if !(params.lr > 0.0) {
        return Err(Error::invalid("gbdt_fit: lr must be positive"));
    }
    let n = x.len();
    let d = x[0].len();
    let total: f64 = w.iter().sum();
    let mut prior = [0.0; 3];
    for (yi, wi) in y.iter().zip(w) {
        prior[yi.index()] += wi / total;
    }
    let init = prior.map(|p| p.max(PRIOR_FLOOR).ln());
    let binned = Binned::new(x);
    let mut f = vec![init; n];
    let mut loss = weighted_log_loss(&f, y, w);
    let mut history = vec![loss];
    let mut trees = Vec::with_capacity(params.rounds);
    let all: Vec<usize> = (0..n).collect();

    for _ in 0..params.rounds {
        let probs: Vec<[f64; 3]> = f.iter().map(softmax3).collect();
        let mut round: [Tree; 3] = std::array::from_fn(|_| Tree { nodes: vec![] });
        let mut deltas = vec![[0.0; 3]; n];
        for k in 0..3 {
            let grad: Vec<f64> = (0..n)
                .map(|i| w[i] * (probs[i][k] - if y[i].index() == k { 1.0 } else { 0.0 }))
                .collect();
            let hess: Vec<f64> = (0..n)
                .map(|i| w[i] * (probs[i][k] * (1.0 - probs[i][k])).max(1e-16))
                .collect();
            let mut b = TreeBuilder {
                binned: &binned,
                grad: &grad,
                hess: &hess,
                max_depth: params.depth,
                nodes: Vec::new(),
            };
            b.build(all.clone(), 0);
            let tree = Tree { nodes: b.nodes };
            for (i, delta) in deltas.iter_mut().enumerate() {
                delta[k] = tree.predict(&x[i]);
            }
            round[k] = tree;
        }
        let mut step = params.lr;
        let mut accepted = 0.0;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<[f64; 3]> = f
                .iter()
                .zip(&deltas)
                .map(|(fi, di)| [fi[0] + step * di[0], fi[1] + step * di[1], fi[2] + step * di[2]])
                .collect();
            let l = weighted_log_loss(&cand, y, w);
            if l.is_finite() && l <= loss {
                f = cand;
                loss = l;
                accepted = step;
                break;
            }
            step *= 0.5;
        }
        for t in round.iter_mut() {
            t.scale(accepted);
        }
        history.push(loss);
        trees.push(round);
    }
    Ok(GbdtModel {
        init,
        trees,
        learning_rate: params.lr,
        n_rounds: params.rounds,
        n_features: d,
        loss_history: history,
    })
}
