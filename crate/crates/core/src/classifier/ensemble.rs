// SPDX-License-Identifier: Apache-2.0

use crate::error::{Error, Result};
use crate::features::{FeatureSpec, PcaTransform};

use super::{GbdtModel, SoftmaxModel, Standardizer};

#[derive(Debug, Clone, PartialEq)]
pub enum Member {
    /// Consumes standardized features.
    Softmax(SoftmaxModel),
    /// Consumes raw features.
    Gbdt(GbdtModel),
}

impl Member {
    pub fn name(&self) -> &'static str {
        match self {
            Member::Softmax(_) => "softmax",
            Member::Gbdt(_) => "gbdt",
        }
    }

    pub fn predict_proba(&self, raw: &[f64], standardized: &[f64]) -> [f64; 3] {
        match self {
            Member::Softmax(m) => m.predict_proba(standardized),
            Member::Gbdt(m) => m.predict_proba(raw),
        }
    }
}

/// Soft-voting ensemble plus everything needed to turn detections into its
/// inputs at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<(Member, f64)>,
    pub standardizer: Standardizer,
    pub pca_full: Option<PcaTransform>,
    pub pca_crop: Option<PcaTransform>,
    pub feature_spec: FeatureSpec,
    pub class_priors: [f64; 3],
}

impl EnsembleModel {
    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::invalid("ensemble has no members"));
        }
        let total: f64 = self.members.iter().map(|(_, w)| *w).sum();
        if self.members.iter().any(|(_, w)| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("ensemble weights must be >= 0 and sum to 1, sum {total}")));
        }
        let d = self.feature_spec.dim();
        if self.standardizer.mean.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: self.standardizer.mean.len(),
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.feature_spec.dim()
    }

    /// Weighted sum of member probabilities for a raw feature vector.
    pub fn predict_proba(&self, row: &[f64]) -> Result<[f64; 3]> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: row.len(),
            });
        }
        let z = self.standardizer.apply(row);
        let mut p = [0.0; 3];
        for (m, w) in &self.members {
            if *w == 0.0 {
                continue;
            }
            let q = m.predict_proba(row, &z);
            for k in 0..3 {
                p[k] += w * q[k];
            }
        }
        let s: f64 = p.iter().sum();
        Ok(p.map(|v| v / s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed(bias: [f64; 3]) -> Member {
        Member::Softmax(SoftmaxModel {
            weights: vec![vec![0.0]; 3],
            bias,
            l2: 0.0,
        })
    }

    fn model(members: Vec<(Member, f64)>) -> EnsembleModel {
        EnsembleModel {
            members,
            standardizer: Standardizer { mean: vec![0.0; 4], std: vec![1.0; 4] },
            pca_full: None,
            pca_crop: None,
            feature_spec: "B".parse().unwrap(),
            class_priors: [1.0 / 3.0; 3],
        }
    }

    #[test]
    fn convex_combination() {
        // near one-hot members
        let m = model(vec![(fixed([60.0, 0.0, 0.0]), 0.5), (fixed([0.0, 60.0, 0.0]), 0.5)]);
        m.validate().unwrap();
        let p = m.predict_proba(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12 && p[2] < 1e-12);
        assert!(m.predict_proba(&[0.0; 3]).is_err());
    }

    #[test]
    fn single_member_passthrough() {
        let member = fixed([0.3, -1.0, 2.0]);
        let want = member.predict_proba(&[0.0], &[0.0]);
        let m = model(vec![(member, 1.0)]);
        let got = m.predict_proba(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        for k in 0..3 {
            assert!((got[k] - want[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_weights_rejected() {
        assert!(model(vec![(fixed([0.0; 3]), 0.7)]).validate().is_err());
        assert!(model(vec![]).validate().is_err());
    }
}
