// SPDX-License-Identifier: Apache-2.0

//! Gaze-duration classifier: multinomial logistic regression and multiclass
//! gradient-boosted trees combined by soft voting, tuned with billboard-grouped
//! cross-validation, plus per-billboard probability voting.

mod bundle;
mod cv;
mod ensemble;
mod gbdt;
mod softmax;

use std::collections::BTreeMap;

pub use bundle::{bundle_summary, decode_bundle, encode_bundle, read_bundle, write_bundle, BUNDLE_MAGIC};
pub use cv::{cv_tune, select_weights, CvPlan, CvReport, HyperConfig, MemberKind, SearchSpace};
pub use ensemble::{EnsembleModel, Member};
pub use gbdt::{gbdt_fit, GbdtModel, GbdtParams, Node, Tree};
pub use softmax::{loss_and_grad, softmax_fit, SoftmaxModel, SoftmaxParams};

use crate::error::{Error, Result};
use crate::geometry::GazeClass;

pub const NUM_CLASSES: usize = GazeClass::COUNT;

/// Numerically stable softmax over three logits.
pub fn softmax3(z: &[f64; 3]) -> [f64; 3] {
    let m = z[0].max(z[1]).max(z[2]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp(), (z[2] - m).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

/// Labeled design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<GazeClass>,
}

impl TrainSet {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<GazeClass>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid(format!("{} rows but {} labels", x.len(), y.len())));
        }
        if x.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        let d = x[0].len();
        if x.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("rows have unequal lengths"));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Self { x, y })
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for y in &self.y {
            c[y.index()] += 1;
        }
        c
    }

    /// Per-sample weights: inverse class frequency over the present classes
    /// (`n / (present * n_c)`), or all ones.
    pub fn sample_weights(&self, balance: bool) -> Vec<f64> {
        if !balance {
            return vec![1.0; self.len()];
        }
        let counts = self.class_counts();
        let present = counts.iter().filter(|&&c| c > 0).count() as f64;
        let n = self.len() as f64;
        self.y
            .iter()
            .map(|y| n / (present * counts[y.index()] as f64))
            .collect()
    }

    /// Empirical (unweighted) class frequencies.
    pub fn class_priors(&self) -> [f64; 3] {
        let c = self.class_counts();
        let n = self.len() as f64;
        [c[0] as f64 / n, c[1] as f64 / n, c[2] as f64 / n]
    }
}

/// Z-score statistics frozen at training time.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let n = x.len() as f64;
        let d = x[0].len();
        let mut mean = vec![0.0; d];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in x {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_all(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter().map(|r| self.apply(r)).collect()
    }
}

/// Sum probability vectors and take the argmax (ties toward the lower class).
pub fn vote(probs: &[[f64; 3]]) -> Result<GazeClass> {
    if probs.is_empty() {
        return Err(Error::invalid("cannot vote over an empty group"));
    }
    Ok(GazeClass::argmax(&sum_probs(probs)))
}

pub fn sum_probs(probs: &[[f64; 3]]) -> [f64; 3] {
    let mut s = [0.0; 3];
    for p in probs {
        for k in 0..3 {
            s[k] += p[k];
        }
    }
    s
}

/// Per-billboard vote over `(billboard_id, probabilities)` pairs.
/// Returns summed probabilities and the voted class, keyed by billboard.
pub fn aggregate<'a, I>(predictions: I) -> BTreeMap<String, ([f64; 3], GazeClass)>
where
    I: IntoIterator<Item = (&'a str, [f64; 3])>,
{
    let mut groups: BTreeMap<String, Vec<[f64; 3]>> = BTreeMap::new();
    for (id, p) in predictions {
        groups.entry(id.to_string()).or_default().push(p);
    }
    groups
        .into_iter()
        .map(|(id, ps)| {
            let s = sum_probs(&ps);
            (id, (s, GazeClass::argmax(&s)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vote_examples() {
        assert_eq!(vote(&[[0.1, 0.2, 0.7]]).unwrap(), GazeClass::Long);
        assert_eq!(
            vote(&[[0.5, 0.3, 0.2], [0.1, 0.6, 0.3]]).unwrap(),
            GazeClass::Medium
        );
        assert_eq!(vote(&[[0.5, 0.5, 0.0]]).unwrap(), GazeClass::None);
        assert!(vote(&[]).is_err());
    }

    #[test]
    fn aggregate_groups_by_billboard() {
        let preds = vec![
            ("b1", [0.5, 0.3, 0.2]),
            ("b2", [0.0, 0.0, 1.0]),
            ("b1", [0.1, 0.6, 0.3]),
        ];
        let agg = aggregate(preds);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg["b1"].1, GazeClass::Medium);
        assert!((agg["b1"].0[1] - 0.9).abs() < 1e-12);
        assert_eq!(agg["b2"].1, GazeClass::Long);
    }

    #[test]
    fn balanced_weights() {
        let t = TrainSet::new(
            vec![vec![0.0]; 4],
            vec![GazeClass::None, GazeClass::None, GazeClass::None, GazeClass::Long],
        )
        .unwrap();
        let w = t.sample_weights(true);
        // n / (present * n_c): 4 / (2 * 3) and 4 / (2 * 1)
        assert!((w[0] - 4.0 / 6.0).abs() < 1e-12);
        assert!((w[3] - 2.0).abs() < 1e-12);
        assert_eq!(t.sample_weights(false), vec![1.0; 4]);
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let s = Standardizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        assert_eq!(s.apply(&[3.0, 5.0]), vec![1.0, 0.0]);
    }

    fn probs() -> impl Strategy<Value = [f64; 3]> {
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(a, b, c)| {
            let s = a + b + c + 1e-9;
            [a / s, b / s, c / s]
        })
    }

    proptest! {
        #[test]
        fn vote_is_permutation_invariant(mut ps in prop::collection::vec(probs(), 1..20), rot in 0usize..20) {
            let a = vote(&ps).unwrap();
            let r = rot % ps.len();
            ps.rotate_left(r);
            ps.reverse();
            prop_assert_eq!(a, vote(&ps).unwrap());
        }

        #[test]
        fn vote_is_scale_invariant(ps in prop::collection::vec(probs(), 1..20), c in 0.01..100.0f64) {
            // exact ties may flip under rounding; compare only with a clear margin
            let s = sum_probs(&ps);
            let mut sorted = s;
            sorted.sort_by(|a, b| b.total_cmp(a));
            prop_assume!(sorted[0] - sorted[1] > 1e-9);
            let scaled: Vec<[f64; 3]> = ps.iter().map(|p| [p[0] * c, p[1] * c, p[2] * c]).collect();
            prop_assert_eq!(vote(&ps).unwrap(), vote(&scaled).unwrap());
        }
    }
}
