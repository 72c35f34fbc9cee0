//! Classification metrics, bootstrap and permutation distributions, and
//! impurity importance.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{csv_err, Label};
use crate::error::{Error, Result};
use crate::learners::{self, FittedParams, ModelSpec, TrainedModel};
use crate::matrix::Matrix;
use crate::{derive_seed, seeds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    PrecisionPositive,
    RecallPositive,
    PrecisionNegative,
    RecallNegative,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Accuracy,
        Metric::PrecisionPositive,
        Metric::RecallPositive,
        Metric::PrecisionNegative,
        Metric::RecallNegative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::PrecisionPositive => "precision_positive",
            Metric::RecallPositive => "recall_positive",
            Metric::PrecisionNegative => "precision_negative",
            Metric::RecallNegative => "recall_negative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSample {
    pub accuracy: f64,
    pub precision_positive: f64,
    pub recall_positive: f64,
    pub precision_negative: f64,
    pub recall_negative: f64,
}

impl MetricSample {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Accuracy => self.accuracy,
            Metric::PrecisionPositive => self.precision_positive,
            Metric::RecallPositive => self.recall_positive,
            Metric::PrecisionNegative => self.precision_negative,
            Metric::RecallNegative => self.recall_negative,
        }
    }

    pub fn set(&mut self, m: Metric, v: f64) {
        match m {
            Metric::Accuracy => self.accuracy = v,
            Metric::PrecisionPositive => self.precision_positive = v,
            Metric::RecallPositive => self.recall_positive = v,
            Metric::PrecisionNegative => self.precision_negative = v,
            Metric::RecallNegative => self.recall_negative = v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Set when a ratio had a zero denominator and was reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Degeneracy {
    pub no_predicted_positive: bool,
    pub no_predicted_negative: bool,
    pub no_actual_positive: bool,
    pub no_actual_negative: bool,
}

impl Degeneracy {
    pub fn any(&self) -> bool {
        self.no_predicted_positive || self.no_predicted_negative || self.no_actual_positive || self.no_actual_negative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sample: MetricSample,
    pub confusion: Confusion,
    pub degeneracy: Degeneracy,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn add(&mut self, truth: Label, pred: Label) {
        match (truth, pred) {
            (Label::Positive, Label::Positive) => self.tp += 1,
            (Label::Negative, Label::Positive) => self.fp += 1,
            (Label::Negative, Label::Negative) => self.tn += 1,
            (Label::Positive, Label::Negative) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn report(&self) -> MetricReport {
        let sample = MetricSample {
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision_positive: ratio(self.tp, self.tp + self.fp),
            recall_positive: ratio(self.tp, self.tp + self.fn_),
            precision_negative: ratio(self.tn, self.tn + self.fn_),
            recall_negative: ratio(self.tn, self.tn + self.fp),
        };
        MetricReport {
            sample,
            confusion: *self,
            degeneracy: Degeneracy {
                no_predicted_positive: self.tp + self.fp == 0,
                no_predicted_negative: self.tn + self.fn_ == 0,
                no_actual_positive: self.tp + self.fn_ == 0,
                no_actual_negative: self.tn + self.fp == 0,
            },
        }
    }
}

pub fn classification_metrics(y_true: &[Label], y_pred: &[Label]) -> Result<MetricReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Input(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Input("metrics need at least one row".into()));
    }
    let mut c = Confusion::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        c.add(t, p);
    }
    Ok(c.report())
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDistribution {
    pub samples: Vec<MetricSample>,
    pub median: MetricSample,
    pub p2_5: MetricSample,
    pub p97_5: MetricSample,
    pub seed: u64,
}

impl MetricDistribution {
    pub fn from_samples(samples: Vec<MetricSample>, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("distribution needs at least one sample".into()));
        }
        let mut median = MetricSample::default();
        let mut p2_5 = MetricSample::default();
        let mut p97_5 = MetricSample::default();
        for m in Metric::ALL {
            let mut v: Vec<f64> = samples.iter().map(|s| s.get(m)).collect();
            v.sort_by(f64::total_cmp);
            median.set(m, percentile_sorted(&v, 0.5));
            p2_5.set(m, percentile_sorted(&v, 0.025));
            p97_5.set(m, percentile_sorted(&v, 0.975));
        }
        Ok(MetricDistribution {
            samples,
            median,
            p2_5,
            p97_5,
            seed,
        })
    }

    pub fn values(&self, m: Metric) -> Vec<f64> {
        self.samples.iter().map(|s| s.get(m)).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let err = |e| csv_err(path, e);
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let mut header = vec!["round"];
        header.extend(Metric::ALL.iter().map(|m| m.as_str()));
        w.write_record(&header).map_err(err)?;
        for (r, s) in self.samples.iter().enumerate() {
            let mut rec = vec![r.to_string()];
            rec.extend(Metric::ALL.iter().map(|&m| s.get(m).to_string()));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, seed: u64) -> Result<Self> {
        let err = |e| csv_err(path, e);
        let mut r = csv::Reader::from_path(path).map_err(err)?;
        let headers = r.headers().map_err(err)?.clone();
        let cols: Vec<usize> = Metric::ALL
            .iter()
            .map(|m| {
                headers
                    .iter()
                    .position(|h| h == m.as_str())
                    .ok_or_else(|| crate::dataset::ingest(path, m.as_str(), "missing column"))
            })
            .collect::<Result<_>>()?;
        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(err)?;
            let mut s = MetricSample::default();
            for (m, &c) in Metric::ALL.iter().zip(&cols) {
                let v: f64 = rec[c]
                    .parse()
                    .map_err(|_| crate::dataset::ingest(path, m.as_str(), &format!("bad number {:?}", &rec[c])))?;
                s.set(*m, v);
            }
            samples.push(s);
        }
        Self::from_samples(samples, seed)
    }
}

/// Resamples fixed predictions `b` times with replacement.
pub fn bootstrap_predictions(y_true: &[Label], y_pred: &[Label], b: usize, seed: u64) -> Result<MetricDistribution> {
    classification_metrics(y_true, y_pred)?;
    if b == 0 {
        return Err(Error::Config("bootstrap needs B >= 1".into()));
    }
    let n = y_true.len();
    let samples: Vec<MetricSample> = (0..b)
        .into_par_iter()
        .map(|round| {
            let mut rng = seeds::rng(derive_seed!(seed, "bootstrap", round));
            let mut c = Confusion::default();
            for _ in 0..n {
                let i = rng.random_range(0..n);
                c.add(y_true[i], y_pred[i]);
            }
            c.report().sample
        })
        .collect();
    MetricDistribution::from_samples(samples, seed)
}

pub fn bootstrap_evaluate(
    model: &TrainedModel,
    x_test: &Matrix,
    y_test: &[Label],
    b: usize,
    seed: u64,
) -> Result<MetricDistribution> {
    if x_test.rows() == 0 {
        return Err(Error::Input("empty test set".into()));
    }
    let pred = learners::predict(model, x_test)?;
    bootstrap_predictions(y_test, &pred.labels, b, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub null: MetricDistribution,
    pub observed_median: MetricSample,
    pub p_values: MetricSample,
}

impl PermutationResult {
    /// True when the null and observed accuracy ranges intersect.
    pub fn accuracy_overlap(&self, observed: &MetricDistribution) -> bool {
        let null_max = self.null.values(Metric::Accuracy).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let obs_min = observed.values(Metric::Accuracy).into_iter().fold(f64::INFINITY, f64::min);
        null_max >= obs_min
    }
}

/// `(1 + #{null >= observed}) / (B + 1)` per metric.
pub fn permutation_p_values(null: &[MetricSample], observed: &MetricSample) -> MetricSample {
    let mut p = MetricSample::default();
    for m in Metric::ALL {
        let hits = null.iter().filter(|s| s.get(m) >= observed.get(m)).count();
        p.set(m, (1 + hits) as f64 / (null.len() + 1) as f64);
    }
    p
}

/// Retrains on shuffled training labels `b` times with fixed hyperparameters
/// and scores each model on the intact test set.
#[allow(clippy::too_many_arguments)]
pub fn permutation_test(
    spec: &ModelSpec,
    x_train: &Matrix,
    y_train: &[Label],
    x_test: &Matrix,
    y_test: &[Label],
    observed_median: &MetricSample,
    b: usize,
    seed: u64,
) -> Result<PermutationResult> {
    if b < 1 {
        return Err(Error::Config("permutation test needs B >= 1".into()));
    }
    if x_test.rows() == 0 || x_test.rows() != y_test.len() {
        return Err(Error::Input("test features and labels must be non-empty and aligned".into()));
    }
    let null: Vec<MetricSample> = (0..b)
        .into_par_iter()
        .map(|round| -> Result<MetricSample> {
            let mut shuffled = y_train.to_vec();
            shuffled.shuffle(&mut seeds::rng(derive_seed!(seed, "permute", round)));
            let model = learners::fit(spec, x_train, &shuffled, derive_seed!(seed, "permute_fit", round))?;
            let pred = learners::predict(&model, x_test)?;
            Ok(classification_metrics(y_test, &pred.labels)?.sample)
        })
        .collect::<Result<_>>()?;
    let p_values = permutation_p_values(&null, observed_median);
    Ok(PermutationResult {
        null: MetricDistribution::from_samples(null, seed)?,
        observed_median: *observed_median,
        p_values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// (feature, importance), sorted descending; ties keep column order.
    pub ranked: Vec<(String, f64)>,
}

impl ImportanceReport {
    pub fn top(&self, k: usize) -> &[(String, f64)] {
        &self.ranked[..k.min(self.ranked.len())]
    }

    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        self.ranked.iter().position(|(f, _)| f == feature)
    }

    pub fn as_map(&self) -> BTreeMap<String, f64> {
        self.ranked.iter().cloned().collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let err = |e| csv_err(path, e);
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(["feature", "importance"]).map_err(err)?;
        for (f, v) in &self.ranked {
            w.write_record([f.as_str(), &v.to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Normalized impurity importance of a tree-based model.
pub fn impurity_importance(model: &TrainedModel, feature_names: &[String]) -> Result<ImportanceReport> {
    let raw = match &model.fitted {
        FittedParams::Forest(f) => &f.importances,
        FittedParams::Boosting(b) => &b.importances,
        _ => {
            return Err(Error::Capability(format!(
                "{} has no impurity importance",
                model.spec.algorithm()
            )))
        }
    };
    if raw.len() != feature_names.len() {
        return Err(Error::Input(format!(
            "{} importances but {} feature names",
            raw.len(),
            feature_names.len()
        )));
    }
    let total: f64 = raw.iter().sum();
    let mut ranked: Vec<(String, f64)> = feature_names
        .iter()
        .zip(raw)
        .map(|(n, &v)| (n.clone(), if total > 0.0 { v / total } else { 0.0 }))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(ImportanceReport { ranked })
}
