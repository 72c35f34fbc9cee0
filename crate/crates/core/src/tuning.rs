//! Stratified k-fold cross-validation and successive-halving grid search.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, ScalerParams};
use crate::error::{Error, Result};
use crate::learners::{self, Algorithm, ModelSpec, ParamMap, ParamValue};
use crate::matrix::Matrix;
use crate::{derive_seed, seeds};

/// Candidate values per hyperparameter; candidates are the cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamGrid {
    pub params: BTreeMap<String, Vec<ParamValue>>,
}

impl ParamGrid {
    pub fn new(params: BTreeMap<String, Vec<ParamValue>>) -> Result<Self> {
        if let Some((k, _)) = params.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::Config(format!("grid parameter {k:?} has no values")));
        }
        Ok(ParamGrid { params })
    }

    /// Grid with one value per parameter.
    pub fn single(spec: &ModelSpec) -> Self {
        ParamGrid {
            params: spec.params().into_iter().map(|(k, v)| (k, vec![v])).collect(),
        }
    }

    pub fn default_for(algorithm: Algorithm) -> Self {
        let num = |vs: &[f64]| vs.iter().map(|&v| Some(v)).collect::<Vec<_>>();
        let mut p = BTreeMap::new();
        match algorithm {
            Algorithm::Lr => {
                p.insert("C".into(), num(&[0.01, 0.1, 1.0, 10.0, 100.0]));
            }
            Algorithm::Qda => {
                p.insert("reg_eps".into(), num(&[learners::DEFAULT_QDA_REG_EPS]));
            }
            Algorithm::SvmRbf => {
                p.insert("C".into(), num(&[1.0, 10.0, 100.0, 1000.0]));
                p.insert("gamma".into(), num(&[0.001, 0.01, 0.1, 1.0]));
            }
            Algorithm::Rf => {
                p.insert("max_depth".into(), vec![None, Some(20.0), Some(30.0)]);
                p.insert("n_estimators".into(), num(&[200.0, 1000.0]));
            }
            Algorithm::Gb => {
                p.insert("learning_rate".into(), num(&[0.1, 0.2, 0.3]));
                p.insert("max_depth".into(), num(&[3.0, 5.0]));
                p.insert("n_estimators".into(), num(&[200.0, 500.0, 1000.0, 1500.0]));
            }
        }
        ParamGrid { params: p }
    }

    pub fn len(&self) -> usize {
        self.params.values().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Validated specs, keys in sorted order with the last key varying fastest.
    pub fn candidates(&self, algorithm: Algorithm) -> Result<Vec<ModelSpec>> {
        let keys: Vec<&String> = self.params.keys().collect();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; keys.len()];
        loop {
            let map: ParamMap = keys
                .iter()
                .zip(&idx)
                .map(|(k, &i)| ((*k).clone(), self.params[*k][i]))
                .collect();
            out.push(ModelSpec::from_params(algorithm, &map)?);
            let mut pos = keys.len();
            loop {
                if pos == 0 {
                    return Ok(out);
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < self.params[keys[pos]].len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
}

/// Lexicographic order on parameter tuples; `None` sorts below numbers.
pub fn compare_params(a: &ModelSpec, b: &ModelSpec) -> Ordering {
    let (pa, pb) = (a.params(), b.params());
    for ((ka, va), (kb, vb)) in pa.iter().zip(&pb) {
        let o = ka.cmp(kb).then_with(|| match (va, vb) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some(x), Some(y)) => x.total_cmp(y),
        });
        if o != Ordering::Equal {
            return o;
        }
    }
    pa.len().cmp(&pb.len())
}

/// Stratified folds: each class is shuffled and dealt round-robin, the
/// classes one after another, so fold sizes differ by at most one.
pub fn kfold_indices(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::Input(format!("k = {k} exceeds {n} rows")));
    }
    let mut rng = seeds::rng(seed);
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    let mut slot = 0;
    for class in Label::BOTH {
        let mut rows: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        rows.shuffle(&mut rng);
        for r in rows {
            folds[slot % k].push(r);
            slot += 1;
        }
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub spec: ModelSpec,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
}

/// Accuracy per held-out fold, with the scaler re-fitted on each training part.
pub fn cross_validate(spec: &ModelSpec, x: &Matrix, y: &[Label], k: usize, seed: u64) -> Result<CvResult> {
    if x.rows() != y.len() {
        return Err(Error::Input(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    let folds = kfold_indices(y, k, derive_seed!(seed, "folds"))?;
    let mut fold_scores = Vec::with_capacity(k);
    for (f, test) in folds.iter().enumerate() {
        let mut is_test = vec![false; y.len()];
        test.iter().for_each(|&i| is_test[i] = true);
        let train: Vec<usize> = (0..y.len()).filter(|&i| !is_test[i]).collect();
        let y_train: Vec<Label> = train.iter().map(|&i| y[i]).collect();
        let pos = y_train.iter().filter(|l| l.is_positive()).count();
        if pos == 0 || pos == y_train.len() {
            return Err(Error::Fold {
                fold: f,
                message: "training part lacks one class".into(),
            });
        }
        let scaler = ScalerParams::fit(x, &train)?;
        let x_train = scaler.transform(&x.select_rows(&train))?;
        let x_test = scaler.transform(&x.select_rows(test))?;
        let model = learners::fit(spec, &x_train, &y_train, derive_seed!(seed, "fit", f)).map_err(|e| match e {
            Error::Input(m) => Error::Fold { fold: f, message: m },
            other => other,
        })?;
        let pred = learners::predict(&model, &x_test)?;
        let correct = pred.labels.iter().zip(test).filter(|(p, &i)| **p == y[i]).count();
        fold_scores.push(correct as f64 / test.len() as f64);
    }
    let mean = fold_scores.iter().sum::<f64>() / k as f64;
    Ok(CvResult {
        spec: spec.clone(),
        fold_scores,
        mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalvingConfig {
    pub eta: usize,
    /// Row budget of the first round; derived from the grid size when absent.
    pub r0: Option<usize>,
}

impl Default for HalvingConfig {
    fn default() -> Self {
        HalvingConfig { eta: 3, r0: None }
    }
}

impl HalvingConfig {
    /// `max(4k, ceil(n / eta^floor(log_eta m)))`, capped at `n`.
    pub fn initial_budget(&self, n: usize, m: usize, k: usize) -> usize {
        if let Some(r0) = self.r0 {
            return r0.min(n);
        }
        let mut denom = 1usize;
        while denom.saturating_mul(self.eta) <= m {
            denom *= self.eta;
        }
        (4 * k).max(n.div_ceil(denom)).min(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub round: usize,
    pub candidate: usize,
    pub spec: ModelSpec,
    pub budget: usize,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalvingResult {
    pub best: ModelSpec,
    pub best_index: usize,
    pub best_score: f64,
    /// Number of candidates evaluated in each round, then the final survivor count.
    pub survivors: Vec<usize>,
    pub audit: Vec<AuditEntry>,
}

/// Stratified subsample of `size` rows, classes apportioned by largest remainder.
pub fn stratified_subsample(labels: &[Label], size: usize, seed: u64) -> Vec<usize> {
    let n = labels.len();
    if size >= n {
        return (0..n).collect();
    }
    let mut rng = seeds::rng(seed);
    let classes: Vec<Vec<usize>> = Label::BOTH
        .iter()
        .map(|&c| (0..n).filter(|&i| labels[i] == c).collect())
        .collect();
    let quotas: Vec<f64> = classes.iter().map(|c| c.len() as f64 * size as f64 / n as f64).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = size - take.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    for c in order {
        if left == 0 {
            break;
        }
        take[c] += 1;
        left -= 1;
    }
    let mut out = Vec::with_capacity(size);
    for (mut rows, t) in classes.into_iter().zip(take) {
        rows.shuffle(&mut rng);
        out.extend_from_slice(&rows[..t]);
    }
    out.sort_unstable();
    out
}

#[allow(clippy::too_many_arguments)]
pub fn halving_grid_search(
    algorithm: Algorithm,
    grid: &ParamGrid,
    x: &Matrix,
    y: &[Label],
    k: usize,
    config: HalvingConfig,
    seed: u64,
) -> Result<HalvingResult> {
    let candidates = grid.candidates(algorithm)?;
    if candidates.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    if config.eta < 2 {
        return Err(Error::Config(format!("eta must be at least 2, got {}", config.eta)));
    }
    let n = y.len();
    let mut budget = config.initial_budget(n, candidates.len(), k);
    if budget < 2 * k {
        return Err(Error::Config(format!(
            "initial budget {budget} rows is below 2k = {} for stratified folds",
            2 * k
        )));
    }

    let mut alive: Vec<usize> = (0..candidates.len()).collect();
    let mut audit = Vec::new();
    let mut survivors = Vec::new();
    let mut round = 0;
    loop {
        survivors.push(alive.len());
        let rows = stratified_subsample(y, budget, derive_seed!(seed, "halving_rows", round));
        let xs = x.select_rows(&rows);
        let ys: Vec<Label> = rows.iter().map(|&i| y[i]).collect();
        let results: Vec<Result<CvResult>> = alive
            .par_iter()
            .map(|&c| cross_validate(&candidates[c], &xs, &ys, k, derive_seed!(seed, "halving_cv", c, round)))
            .collect();
        let mut scored = Vec::with_capacity(alive.len());
        for (&c, r) in alive.iter().zip(results) {
            let r = r?;
            audit.push(AuditEntry {
                round,
                candidate: c,
                spec: candidates[c].clone(),
                budget,
                fold_scores: r.fold_scores,
                mean: r.mean,
            });
            scored.push((c, r.mean));
        }
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| compare_params(&candidates[a.0], &candidates[b.0]))
        });

        let done = alive.len() == 1 || (budget == n && alive.len() <= config.eta);
        let keep = if done { 1 } else { alive.len().div_ceil(config.eta) };
        alive = scored[..keep].iter().map(|s| s.0).collect();
        if alive.len() == 1 {
            if !done {
                survivors.push(1);
            }
            let (best_index, best_score) = scored[0];
            return Ok(HalvingResult {
                best: candidates[best_index].clone(),
                best_index,
                best_score,
                survivors,
                audit,
            });
        }
        budget = (budget * config.eta).min(n);
        round += 1;
    }
}

/// Audit rows tagged with their (variety, algorithm) cell.
pub fn write_audit_csv(path: &Path, rows: &[(String, String, &AuditEntry)]) -> Result<()> {
    let err = |e| crate::dataset::csv_err(path, e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["variety", "algorithm", "round", "candidate", "params", "budget", "fold_scores", "mean"])
        .map_err(err)?;
    for (variety, alg, e) in rows {
        let params = serde_json::to_string(&e.spec.params())?;
        let folds = e.fold_scores.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([
            variety.as_str(),
            alg.as_str(),
            &e.round.to_string(),
            &e.candidate.to_string(),
            &params,
            &e.budget.to_string(),
            &folds,
            &e.mean.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
