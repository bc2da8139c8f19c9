// SPDX-License-Identifier: Apache-2.0

use crate::error::{Error, Result};
use crate::geometry::GazeClass;

use super::softmax3;

/// Multinomial logistic regression over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    /// `3 x d`.
    pub weights: Vec<Vec<f64>>,
    pub bias: [f64; 3],
    pub l2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftmaxParams {
    pub l2: f64,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for SoftmaxParams {
    fn default() -> Self {
        Self {
            l2: 1e-2,
            lr: 0.5,
            epochs: 300,
        }
    }
}

impl SoftmaxModel {
    pub fn zeros(d: usize, l2: f64) -> Self {
        Self {
            weights: vec![vec![0.0; d]; 3],
            bias: [0.0; 3],
            l2,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    fn logits(&self, x: &[f64]) -> [f64; 3] {
        let mut z = self.bias;
        for (zk, wk) in z.iter_mut().zip(&self.weights) {
            *zk += wk.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        z
    }

    pub fn predict_proba(&self, x: &[f64]) -> [f64; 3] {
        softmax3(&self.logits(x))
    }
}

/// Weighted mean cross-entropy plus `l2 / 2 * |W|^2` (bias unpenalized),
/// with its gradient `(dW, db)`.
pub fn loss_and_grad(
    model: &SoftmaxModel,
    x: &[Vec<f64>],
    y: &[GazeClass],
    w: &[f64],
) -> (f64, Vec<Vec<f64>>, [f64; 3]) {
    let d = model.dim();
    let total_w: f64 = w.iter().sum();
    let mut loss = 0.0;
    let mut gw = vec![vec![0.0; d]; 3];
    let mut gb = [0.0; 3];
    for ((xi, yi), wi) in x.iter().zip(y).zip(w) {
        let p = model.predict_proba(xi);
        let c = wi / total_w;
        loss -= c * p[yi.index()].max(1e-300).ln();
        for k in 0..3 {
            let r = c * (p[k] - if k == yi.index() { 1.0 } else { 0.0 });
            gb[k] += r;
            for (g, v) in gw[k].iter_mut().zip(xi) {
                *g += r * v;
            }
        }
    }
    for k in 0..3 {
        for (g, wk) in gw[k].iter_mut().zip(&model.weights[k]) {
            loss += 0.5 * model.l2 * wk * wk;
            *g += model.l2 * wk;
        }
    }
    (loss, gw, gb)
}

/// Full-batch gradient descent from zero parameters. A step that would raise
/// the loss is retried at half the learning rate, so the loss never goes up.
pub fn softmax_fit(
    x: &[Vec<f64>],
    y: &[GazeClass],
    w: &[f64],
    params: &SoftmaxParams,
) -> Result<SoftmaxModel> {
    if x.is_empty() || x.len() != y.len() || x.len() != w.len() {
        return Err(Error::invalid("softmax_fit: inconsistent training data"));
    }
    if !(params.l2 >= 0.0 && params.lr > 0.0) {
        return Err(Error::invalid("softmax_fit: l2 must be >= 0 and lr > 0"));
    }
    let mut model = SoftmaxModel::zeros(x[0].len(), params.l2);
    let (mut loss, mut gw, mut gb) = loss_and_grad(&model, x, y, w);
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("initial loss {loss}")));
    }
    let mut lr = params.lr;
    for _ in 0..params.epochs {
        let gnorm2: f64 = gw.iter().flatten().map(|g| g * g).sum::<f64>()
            + gb.iter().map(|g| g * g).sum::<f64>();
        if gnorm2 < 1e-20 {
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand = model.clone();
            for k in 0..3 {
                for (p, g) in cand.weights[k].iter_mut().zip(&gw[k]) {
                    *p -= lr * g;
                }
                cand.bias[k] -= lr * gb[k];
            }
            let (l, cgw, cgb) = loss_and_grad(&cand, x, y, w);
            if !l.is_finite() {
                return Err(Error::Diverged(format!("loss {l} at lr {lr}")));
            }
            if l <= loss {
                model = cand;
                loss = l;
                gw = cgw;
                gb = cgb;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_model_is_uniform() {
        let m = SoftmaxModel::zeros(4, 0.0);
        let p = m.predict_proba(&[1.0, -2.0, 3.0, 100.0]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn separable_clusters_are_fit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let centers = [(-5.0, 0.0), (5.0, 0.0), (0.0, 8.0)];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (k, (cx, cy)) in centers.iter().enumerate() {
            for _ in 0..10 {
                x.push(vec![cx + rng.random_range(-0.5..0.5), cy + rng.random_range(-0.5..0.5)]);
                y.push(GazeClass::ALL[k]);
            }
        }
        let w = vec![1.0; x.len()];
        let m = softmax_fit(&x, &y, &w, &SoftmaxParams { l2: 1e-4, lr: 1.0, epochs: 500 }).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(xi, yi)| GazeClass::argmax(&m.predict_proba(xi)) == **yi)
            .count();
        assert_eq!(correct, 30);
        let (l0, _, _) = loss_and_grad(&SoftmaxModel::zeros(2, 1e-4), &x, &y, &w);
        let (l1, _, _) = loss_and_grad(&m, &x, &y, &w);
        assert!(l1 <= l0);
    }

    #[test]
    fn huge_learning_rate_still_descends() {
        let x = vec![vec![1.0], vec![-1.0], vec![0.5]];
        let y = vec![GazeClass::None, GazeClass::Long, GazeClass::Medium];
        let w = vec![1.0; 3];
        let m = softmax_fit(&x, &y, &w, &SoftmaxParams { l2: 0.1, lr: 1e6, epochs: 20 }).unwrap();
        let (l0, _, _) = loss_and_grad(&SoftmaxModel::zeros(1, 0.1), &x, &y, &w);
        let (l1, _, _) = loss_and_grad(&m, &x, &y, &w);
        assert!(l1 <= l0);
    }

    #[test]
    fn rejects_inconsistent_data() {
        let r = softmax_fit(&[vec![1.0]], &[], &[1.0], &SoftmaxParams::default());
        assert!(r.is_err());
    }
}
