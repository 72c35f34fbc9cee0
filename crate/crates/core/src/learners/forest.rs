//! Random forest: bootstrap-bagged Gini trees with majority voting.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{build_tree, Criterion, Presorted, Tree, TreeParams};
use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::{derive_seed, seeds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    /// Mean impurity decrease per feature across trees (not normalized).
    pub importances: Vec<f64>,
}

impl ForestModel {
    /// Fraction of trees voting positive; a tree votes positive when its
    /// leaf's positive fraction exceeds one half.
    pub fn vote_fraction(&self, x: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.predict(x) > 0.5).count();
        votes as f64 / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForestOptions {
    /// Resample rows with replacement for every tree.
    pub bootstrap: bool,
}

impl Default for ForestOptions {
    fn default() -> Self {
        ForestOptions { bootstrap: true }
    }
}

pub fn fit_random_forest(
    x: &Matrix,
    y: &[Label],
    n_estimators: usize,
    max_depth: Option<usize>,
    seed: u64,
) -> Result<ForestModel> {
    fit_random_forest_with(x, y, n_estimators, max_depth, seed, ForestOptions::default())
}

pub fn fit_random_forest_with(
    x: &Matrix,
    y: &[Label],
    n_estimators: usize,
    max_depth: Option<usize>,
    seed: u64,
    opts: ForestOptions,
) -> Result<ForestModel> {
    super::validate_training(x, y)?;
    if n_estimators == 0 {
        return Err(Error::Config("RF: n_estimators must be >= 1".into()));
    }
    let n = x.rows();
    let d = x.cols();
    let target: Vec<f64> = y.iter().map(|l| if l.is_positive() { 1.0 } else { 0.0 }).collect();
    let presorted = Presorted::new(x);
    let params = TreeParams {
        criterion: Criterion::Gini,
        max_depth,
        max_features: (d as f64).sqrt().ceil() as usize,
    };

    let mut trees = Vec::with_capacity(n_estimators);
    let mut importances = vec![0.0; d];
    let mut weights = vec![0.0; n];
    for t in 0..n_estimators {
        let mut rng = seeds::rng(derive_seed!(seed, "rf_tree", t));
        if opts.bootstrap {
            weights.iter_mut().for_each(|w| *w = 0.0);
            for _ in 0..n {
                weights[rng.random_range(0..n)] += 1.0;
            }
        } else {
            weights.iter_mut().for_each(|w| *w = 1.0);
        }
        let mut positive_fraction = |rows: &[u32]| {
            let (mut w, mut p) = (0.0, 0.0);
            for &r in rows {
                w += weights[r as usize];
                p += weights[r as usize] * target[r as usize];
            }
            p / w
        };
        let fit = build_tree(x, &presorted, &target, &weights, params, &mut rng, &mut positive_fraction);
        for (acc, v) in importances.iter_mut().zip(&fit.importance) {
            *acc += v / n_estimators as f64;
        }
        trees.push(fit.tree);
    }
    Ok(ForestModel { trees, importances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn noisy(n: usize, seed: u64) -> (Matrix, Vec<Label>) {
        let mut rng = seeds::rng(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 1;
            let row: Vec<f64> = (0..6)
                .map(|j| normal.sample(&mut rng) + if pos && j == 2 { 1.0 } else { 0.0 })
                .collect();
            rows.push(row);
            y.push(Label::from_bool(pos));
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn single_unbootstrapped_tree_memorizes_distinct_rows() {
        let (x, y) = noisy(200, 1);
        let m = fit_random_forest_with(&x, &y, 1, None, 0, ForestOptions { bootstrap: false }).unwrap();
        for (r, l) in x.row_iter().zip(&y) {
            assert_eq!(m.vote_fraction(r) > 0.5, l.is_positive());
        }
    }

    #[test]
    fn same_seed_same_forest() {
        let (x, y) = noisy(150, 2);
        let a = fit_random_forest(&x, &y, 15, Some(5), 42).unwrap();
        let b = fit_random_forest(&x, &y, 15, Some(5), 42).unwrap();
        assert_eq!(a, b);
        let c = fit_random_forest(&x, &y, 15, Some(5), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn even_split_vote_is_negative() {
        let leaf = |v: f64| Tree {
            nodes: vec![super::super::tree::Node::Leaf { value: v }],
        };
        let m = ForestModel {
            trees: vec![leaf(1.0), leaf(0.0)],
            importances: vec![0.0],
        };
        let frac = m.vote_fraction(&[0.0]);
        assert_eq!(frac, 0.5);
        let model = super::super::TrainedModel {
            format_version: super::super::MODEL_FORMAT_VERSION,
            spec: super::super::ModelSpec::RandomForest {
                n_estimators: 2,
                max_depth: None,
            },
            fitted: super::super::FittedParams::Forest(m),
            meta: super::super::TrainingMeta { seed: 0, n: 2, d: 1 },
        };
        assert_eq!(model.label_for_score(frac), Label::Negative);
    }

    #[test]
    fn informative_feature_dominates_importance() {
        let (x, y) = noisy(400, 3);
        let m = fit_random_forest(&x, &y, 30, Some(6), 7).unwrap();
        let top = (0..6).max_by(|&a, &b| m.importances[a].total_cmp(&m.importances[b])).unwrap();
        assert_eq!(top, 2);
    }
}
