//! Binary log-loss gradient boosting with Newton leaf values.

use serde::{Deserialize, Serialize};

use super::tree::{build_tree, Criterion, Presorted, Tree, TreeParams};
use crate::dataset::Label;
use crate::error::Result;
use crate::matrix::Matrix;
use crate::{derive_seed, seeds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostingModel {
    /// Initial raw score, the log-odds of the training prior.
    pub init: f64,
    pub learning_rate: f64,
    /// Trees whose leaves hold unshrunk Newton steps.
    pub trees: Vec<Tree>,
    pub importances: Vec<f64>,
}

impl BoostingModel {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.raw_score(x))
    }
}

#[derive(Debug, Clone)]
pub struct BoostingFit {
    pub model: BoostingModel,
    /// Mean training log-loss at stage 0 and after every stage.
    pub loss_trace: Vec<f64>,
}

fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

/// Mean of `log(1 + exp(-s f))` with `s = ±1`.
fn mean_log_loss(f: &[f64], t: &[f64]) -> f64 {
    let total: f64 = f
        .iter()
        .zip(t)
        .map(|(&f, &t)| {
            let z = if t > 0.5 { f } else { -f };
            if z > 0.0 {
                (-z).exp().ln_1p()
            } else {
                -z + z.exp().ln_1p()
            }
        })
        .sum();
    total / f.len() as f64
}

pub fn fit_gradient_boosting(
    x: &Matrix,
    y: &[Label],
    learning_rate: f64,
    max_depth: usize,
    n_estimators: usize,
    seed: u64,
) -> Result<BoostingModel> {
    Ok(fit_with_trace(x, y, learning_rate, max_depth, n_estimators, seed)?.model)
}

pub fn fit_with_trace(
    x: &Matrix,
    y: &[Label],
    learning_rate: f64,
    max_depth: usize,
    n_estimators: usize,
    seed: u64,
) -> Result<BoostingFit> {
    super::validate_training(x, y)?;
    let n = x.rows();
    let d = x.cols();
    let target: Vec<f64> = y.iter().map(|l| if l.is_positive() { 1.0 } else { 0.0 }).collect();
    let prior = target.iter().sum::<f64>() / n as f64;
    let init = (prior / (1.0 - prior)).ln();
    let mut f = vec![init; n];
    let mut loss_trace = vec![mean_log_loss(&f, &target)];
    let mut trees = Vec::new();
    let mut importances = vec![0.0; d];

    if learning_rate > 0.0 {
        let presorted = Presorted::new(x);
        let weights = vec![1.0; n];
        let params = TreeParams {
            criterion: Criterion::Mse,
            max_depth: Some(max_depth),
            max_features: d,
        };
        let mut residual = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for stage in 0..n_estimators {
            for i in 0..n {
                let p = sigmoid(f[i]);
                residual[i] = target[i] - p;
                hess[i] = p * (1.0 - p);
            }
            let mut newton = |rows: &[u32]| {
                let (mut num, mut den) = (0.0, 0.0);
                for &r in rows {
                    num += residual[r as usize];
                    den += hess[r as usize];
                }
                if den < 1e-150 {
                    0.0
                } else {
                    num / den
                }
            };
            let mut rng = seeds::rng(derive_seed!(seed, "gb_stage", stage));
            let fit = build_tree(x, &presorted, &residual, &weights, params, &mut rng, &mut newton);
            for (i, row) in x.row_iter().enumerate() {
                f[i] += learning_rate * fit.tree.predict(row);
            }
            for (acc, v) in importances.iter_mut().zip(&fit.importance) {
                *acc += v / n_estimators as f64;
            }
            trees.push(fit.tree);
            loss_trace.push(mean_log_loss(&f, &target));
        }
    }

    Ok(BoostingFit {
        model: BoostingModel {
            init,
            learning_rate,
            trees,
            importances,
        },
        loss_trace,
    })
}
