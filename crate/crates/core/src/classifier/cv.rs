// SPDX-License-Identifier: Apache-2.0

//! Billboard-grouped k-fold random search and soft-voting weight selection.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::macro_f1;
use crate::features::FeatureSpec;
use crate::geometry::GazeClass;
use crate::parallel;

use super::{
    gbdt_fit, softmax_fit, EnsembleModel, GbdtParams, Member, SoftmaxParams, Standardizer,
    TrainSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberKind {
    Softmax,
    Gbdt,
}

/// Hyper-parameter search bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub n_configs: usize,
    pub l2_min: f64,
    pub l2_max: f64,
    pub depths: Vec<usize>,
    pub rounds_min: usize,
    pub rounds_max: usize,
    pub rounds_step: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    pub weight_step: f64,
    pub members: Vec<MemberKind>,
    pub softmax_lr: f64,
    pub softmax_epochs: usize,
    pub balance_classes: bool,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_configs: 40,
            l2_min: 1e-4,
            l2_max: 10.0,
            depths: vec![2, 3, 4],
            rounds_min: 50,
            rounds_max: 400,
            rounds_step: 50,
            lr_min: 0.03,
            lr_max: 0.3,
            weight_step: 0.1,
            members: vec![MemberKind::Softmax, MemberKind::Gbdt],
            softmax_lr: 0.5,
            softmax_epochs: 300,
            balance_classes: true,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("search space: {m}")));
        if self.n_configs == 0 {
            return bad("n_configs must be >= 1");
        }
        if !(self.l2_min > 0.0 && self.l2_min <= self.l2_max) {
            return bad("need 0 < l2_min <= l2_max");
        }
        if self.depths.is_empty() || self.depths.contains(&0) {
            return bad("depths must be non-empty and positive");
        }
        if self.rounds_min == 0 || self.rounds_min > self.rounds_max || self.rounds_step == 0 {
            return bad("need 0 < rounds_min <= rounds_max and rounds_step > 0");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return bad("need 0 < lr_min <= lr_max");
        }
        if !(self.weight_step > 0.0 && self.weight_step <= 1.0) {
            return bad("weight_step must be in (0, 1]");
        }
        let unit = (1.0 / self.weight_step).round();
        if ((1.0 / self.weight_step) - unit).abs() > 1e-9 {
            return bad("weight_step must divide 1");
        }
        let distinct: BTreeSet<_> = self.members.iter().collect();
        if self.members.is_empty() || distinct.len() != self.members.len() {
            return bad("members must be non-empty and distinct");
        }
        if !(self.softmax_lr > 0.0) {
            return bad("softmax_lr must be positive");
        }
        Ok(())
    }

    /// `n_configs` candidates drawn from a seeded generator.
    pub fn sample(&self, seed: u64) -> Vec<HyperConfig> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0f1_9000);
        let rounds: Vec<usize> = (self.rounds_min..=self.rounds_max)
            .step_by(self.rounds_step)
            .collect();
        let (lo, hi) = (self.l2_min.log10(), self.l2_max.log10());
        (0..self.n_configs)
            .map(|_| {
                let l2 = 10f64.powf(if hi > lo { rng.random_range(lo..hi) } else { lo });
                let depth = self.depths[rng.random_range(0..self.depths.len())];
                let r = rounds[rng.random_range(0..rounds.len())];
                let lr = if self.lr_max > self.lr_min {
                    rng.random_range(self.lr_min..self.lr_max)
                } else {
                    self.lr_min
                };
                HyperConfig { l2, depth, rounds: r, lr }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub l2: f64,
    pub depth: usize,
    pub rounds: usize,
    pub lr: f64,
}

/// Assignment of every billboard to one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: BTreeMap<String, usize>,
}

impl CvPlan {
    /// Shuffle the distinct billboard ids with `seed` and deal them round-robin.
    pub fn new<'a, I: IntoIterator<Item = &'a str>>(billboard_ids: I, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {k}")));
        }
        let mut ids: Vec<&str> = billboard_ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if ids.len() < k {
            return Err(Error::invalid(format!(
                "{} distinct billboards cannot fill {k} folds",
                ids.len()
            )));
        }
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let folds = ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), i % k))
            .collect();
        Ok(Self { k, seed, folds })
    }

    /// `(train, validation)` row indices per fold for rows tagged with `groups`.
    pub fn splits(&self, groups: &[String]) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        let mut out = vec![(Vec::new(), Vec::new()); self.k];
        for (i, g) in groups.iter().enumerate() {
            let f = *self
                .folds
                .get(g)
                .ok_or_else(|| Error::invalid(format!("billboard `{g}` missing from CV plan")))?;
            for (j, (train, val)) in out.iter_mut().enumerate() {
                if j == f {
                    val.push(i);
                } else {
                    train.push(i);
                }
            }
        }
        if out.iter().any(|(_, v)| v.is_empty()) {
            return Err(Error::invalid("a CV fold has no validation rows"));
        }
        Ok(out)
    }
}

/// Outcome of the search, for the human-readable model summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub folds: usize,
    pub configs: Vec<HyperConfig>,
    /// Mean held-out macro F1 per config, per member kind.
    pub scores: BTreeMap<MemberKind, Vec<f64>>,
    pub chosen: BTreeMap<MemberKind, usize>,
    pub weights: Vec<f64>,
    pub weight_score: f64,
}

fn fit_member(
    kind: MemberKind,
    cfg: &HyperConfig,
    data: &TrainSet,
    std: &Standardizer,
    space: &SearchSpace,
) -> Result<Member> {
    let w = data.sample_weights(space.balance_classes);
    Ok(match kind {
        MemberKind::Softmax => Member::Softmax(softmax_fit(
            &std.apply_all(&data.x),
            &data.y,
            &w,
            &SoftmaxParams {
                l2: cfg.l2,
                lr: space.softmax_lr,
                epochs: space.softmax_epochs,
            },
        )?),
        MemberKind::Gbdt => Member::Gbdt(gbdt_fit(
            &data.x,
            &data.y,
            &w,
            &GbdtParams {
                depth: cfg.depth,
                rounds: cfg.rounds,
                lr: cfg.lr,
            },
        )?),
    })
}

fn predict_member(m: &Member, std: &Standardizer, x: &[Vec<f64>]) -> Vec<[f64; 3]> {
    x.iter().map(|r| m.predict_proba(r, &std.apply(r))).collect()
}

fn argmaxes(p: &[[f64; 3]]) -> Vec<GazeClass> {
    p.iter().map(GazeClass::argmax).collect()
}

/// Integer compositions of `n` into `parts`, first part descending.
fn compositions(n: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in (0..=n).rev() {
        for mut rest in compositions(n - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Pick soft-voting weights on a simplex grid with spacing `step`.
///
/// `member_probs[m][i]` is member `m`'s held-out probability for row `i`,
/// `fold_of[i]` the fold that held row `i` out. The score is the mean per-fold
/// macro F1 of the blended argmax. Ties prefer the more concentrated weighting,
/// then the earlier grid point.
pub fn select_weights(
    member_probs: &[Vec<[f64; 3]>],
    labels: &[GazeClass],
    fold_of: &[usize],
    k: usize,
    step: f64,
) -> Result<(Vec<f64>, f64)> {
    if member_probs.is_empty() || member_probs.iter().any(|p| p.len() != labels.len()) {
        return Err(Error::invalid("select_weights: inconsistent member predictions"));
    }
    let n_steps = (1.0 / step).round() as usize;
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for comp in compositions(n_steps, member_probs.len()) {
        let blended: Vec<[f64; 3]> = (0..labels.len())
            .map(|i| {
                let mut p = [0.0; 3];
                for (m, &c) in comp.iter().enumerate() {
                    for j in 0..3 {
                        p[j] += c as f64 * member_probs[m][i][j];
                    }
                }
                p
            })
            .collect();
        let score = mean_fold_f1(&blended, labels, fold_of, k);
        let conc = *comp.iter().max().unwrap();
        let better = match &best {
            None => true,
            Some((s, c, _)) => score > *s || (score == *s && conc > *c),
        };
        if better {
            best = Some((score, conc, comp));
        }
    }
    let (score, _, comp) = best.expect("at least one grid point");
    Ok((comp.iter().map(|&c| c as f64 / n_steps as f64).collect(), score))
}

fn mean_fold_f1(probs: &[[f64; 3]], labels: &[GazeClass], fold_of: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    let mut used = 0;
    for f in 0..k {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
        if idx.is_empty() {
            continue;
        }
        let t: Vec<GazeClass> = idx.iter().map(|&i| labels[i]).collect();
        let p: Vec<GazeClass> = idx.iter().map(|&i| GazeClass::argmax(&probs[i])).collect();
        total += macro_f1(&t, &p);
        used += 1;
    }
    total / used.max(1) as f64
}

/// Random search over `space` with billboard-grouped folds, then soft-voting
/// weight selection and a refit of every member on all rows.
///
/// The returned model carries no PCA transforms; callers attach them.
pub fn cv_tune(
    data: &TrainSet,
    groups: &[String],
    plan: &CvPlan,
    space: &SearchSpace,
    feature_spec: FeatureSpec,
    jobs: usize,
) -> Result<(EnsembleModel, CvReport)> {
    space.validate()?;
    if groups.len() != data.len() {
        return Err(Error::invalid("one billboard id per row required"));
    }
    if data.dim() != feature_spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: feature_spec.dim(),
            actual: data.dim(),
        });
    }
    let splits = plan.splits(groups)?;
    let configs = space.sample(plan.seed);
    let mut fold_of = vec![0; data.len()];
    for (f, (_, val)) in splits.iter().enumerate() {
        for &i in val {
            fold_of[i] = f;
        }
    }
    let fold_data: Vec<(TrainSet, Standardizer, TrainSet)> = splits
        .iter()
        .map(|(tr, va)| {
            let train = data.subset(tr);
            let std = Standardizer::fit(&train.x);
            (train, std, data.subset(va))
        })
        .collect();

    // one task per (member, config, fold)
    let tasks: Vec<(MemberKind, usize, usize)> = space
        .members
        .iter()
        .flat_map(|&m| (0..configs.len()).flat_map(move |c| (0..plan.k).map(move |f| (m, c, f))))
        .collect();
    let results = parallel::try_map(&tasks, jobs, |&(kind, c, f)| {
        let (train, std, val) = &fold_data[f];
        let member = fit_member(kind, &configs[c], train, std, space)?;
        Ok(predict_member(&member, std, &val.x))
    })?;

    let mut scores = BTreeMap::new();
    let mut chosen = BTreeMap::new();
    let mut oof = Vec::new();
    let mut it = results.into_iter();
    for &kind in &space.members {
        let mut per_config = Vec::with_capacity(configs.len());
        let mut per_config_oof = Vec::with_capacity(configs.len());
        for _ in 0..configs.len() {
            let mut held_out = vec![[0.0; 3]; data.len()];
            let mut f1_sum = 0.0;
            for (f, (_, val_idx)) in splits.iter().enumerate() {
                let probs = it.next().expect("task count");
                let truth: Vec<GazeClass> = fold_data[f].2.y.clone();
                f1_sum += macro_f1(&truth, &argmaxes(&probs));
                for (&i, p) in val_idx.iter().zip(probs) {
                    held_out[i] = p;
                }
            }
            per_config.push(f1_sum / plan.k as f64);
            per_config_oof.push(held_out);
        }
        let mut best = 0;
        for (c, s) in per_config.iter().enumerate() {
            if *s > per_config[best] {
                best = c;
            }
        }
        chosen.insert(kind, best);
        oof.push(per_config_oof.swap_remove(best));
        scores.insert(kind, per_config);
    }

    let (weights, weight_score) = select_weights(&oof, &data.y, &fold_of, plan.k, space.weight_step)?;

    let standardizer = Standardizer::fit(&data.x);
    let members = space
        .members
        .iter()
        .zip(&weights)
        .map(|(&kind, &w)| Ok((fit_member(kind, &configs[chosen[&kind]], data, &standardizer, space)?, w)))
        .collect::<Result<Vec<_>>>()?;
    let model = EnsembleModel {
        members,
        standardizer,
        pca_full: None,
        pca_crop: None,
        feature_spec,
        class_priors: data.class_priors(),
    };
    model.validate()?;
    Ok((
        model,
        CvReport {
            folds: plan.k,
            configs,
            scores,
            chosen,
            weights,
            weight_score,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_covers_every_billboard_once() {
        let ids: Vec<String> = (0..23).map(|i| format!("bb{i}")).collect();
        let plan = CvPlan::new(ids.iter().map(String::as_str), 5, 42).unwrap();
        assert_eq!(plan.folds.len(), 23);
        let mut sizes = [0; 5];
        for f in plan.folds.values() {
            sizes[*f] += 1;
        }
        assert!(sizes.iter().all(|&s| s >= 4));
        assert!(CvPlan::new(["a", "b"], 5, 0).is_err());
        assert!(CvPlan::new(["a", "b"], 1, 0).is_err());
    }

    #[test]
    fn splits_keep_groups_together() {
        let groups: Vec<String> = (0..40).map(|i| format!("g{}", i % 8)).collect();
        let plan = CvPlan::new(groups.iter().map(String::as_str), 4, 1).unwrap();
        for (train, val) in plan.splits(&groups).unwrap() {
            let tr: BTreeSet<&String> = train.iter().map(|&i| &groups[i]).collect();
            let va: BTreeSet<&String> = val.iter().map(|&i| &groups[i]).collect();
            assert!(tr.is_disjoint(&va));
            assert_eq!(train.len() + val.len(), 40);
        }
    }

    #[test]
    fn compositions_enumerate_simplex() {
        assert_eq!(compositions(10, 2).len(), 11);
        assert_eq!(compositions(10, 3).len(), 66);
        assert_eq!(compositions(10, 2)[0], vec![10, 0]);
    }

    #[test]
    fn useless_member_gets_zero_weight() {
        let labels: Vec<GazeClass> = (0..30).map(|i| GazeClass::ALL[i % 3]).collect();
        let fold_of: Vec<usize> = (0..30).map(|i| (i / 3) % 3).collect();
        let good: Vec<[f64; 3]> = labels
            .iter()
            .map(|y| {
                let mut p = [0.1; 3];
                p[y.index()] = 0.8;
                p
            })
            .collect();
        // always confidently wrong: macro F1 0 on its own
        let bad: Vec<[f64; 3]> = labels
            .iter()
            .map(|y| {
                let mut p = [0.0; 3];
                p[(y.index() + 1) % 3] = 1.0;
                p
            })
            .collect();
        assert_eq!(mean_fold_f1(&bad, &labels, &fold_of, 3), 0.0);
        let (w, score) = select_weights(&[good.clone(), bad.clone()], &labels, &fold_of, 3, 0.1).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
        assert_eq!(score, 1.0);
        let (w, _) = select_weights(&[bad, good], &labels, &fold_of, 3, 0.1).unwrap();
        assert_eq!(w, vec![0.0, 1.0]);
    }

    #[test]
    fn singleton_search() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 3) as f64, (i % 5) as f64, 0.0, 1.0]).collect();
        let y: Vec<GazeClass> = (0..30).map(|i| GazeClass::ALL[i % 3]).collect();
        let groups: Vec<String> = (0..30).map(|i| format!("b{}", i / 3)).collect();
        let data = TrainSet::new(x, y).unwrap();
        let plan = CvPlan::new(groups.iter().map(String::as_str), 5, 3).unwrap();
        let space = SearchSpace {
            n_configs: 1,
            members: vec![MemberKind::Softmax],
            ..Default::default()
        };
        let (model, report) = cv_tune(&data, &groups, &plan, &space, "B".parse().unwrap(), 1).unwrap();
        assert_eq!(report.chosen[&MemberKind::Softmax], 0);
        assert_eq!(report.weights, vec![1.0]);
        assert_eq!(model.members.len(), 1);
    }
}
