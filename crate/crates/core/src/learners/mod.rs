//! Five binary classifiers behind one fit/predict contract.
//!
//! | tag       | model                                   | score            |
//! |-----------|-----------------------------------------|------------------|
//! | `LR`      | L1-penalized logistic regression        | margin `w·x + b` |
//! | `QDA`     | quadratic discriminant analysis         | log-posterior ratio |
//! | `RF`      | bagged Gini CART trees, majority vote   | positive vote fraction |
//! | `GB`      | log-loss gradient boosting              | raw log-odds `F(x)` |
//! | `SVM_RBF` | soft-margin SVM with RBF kernel (SMO)   | decision value   |
//!
//! Margin-type scores predict positive when strictly greater than zero;
//! the vote fraction predicts positive when strictly greater than one half.

pub mod boosting;
pub mod forest;
pub mod logistic;
pub mod qda;
pub mod svm;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use boosting::BoostingModel;
pub use forest::ForestModel;
pub use logistic::LogisticModel;
pub use qda::QdaModel;
pub use svm::SvmModel;

/// Version of the serialized model layout.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "QDA")]
    Qda,
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "GB")]
    Gb,
    #[serde(rename = "SVM_RBF")]
    SvmRbf,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::SvmRbf,
        Algorithm::Gb,
        Algorithm::Rf,
        Algorithm::Qda,
        Algorithm::Lr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Lr => "LR",
            Algorithm::Qda => "QDA",
            Algorithm::Rf => "RF",
            Algorithm::Gb => "GB",
            Algorithm::SvmRbf => "SVM_RBF",
        }
    }

    pub fn is_tree_based(self) -> bool {
        matches!(self, Algorithm::Rf | Algorithm::Gb)
    }

    /// Names of the hyperparameters the algorithm accepts.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Algorithm::Lr => &["C"],
            Algorithm::Qda => &["reg_eps"],
            Algorithm::Rf => &["max_depth", "n_estimators"],
            Algorithm::Gb => &["learning_rate", "max_depth", "n_estimators"],
            Algorithm::SvmRbf => &["C", "gamma"],
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LR" => Ok(Algorithm::Lr),
            "QDA" => Ok(Algorithm::Qda),
            "RF" => Ok(Algorithm::Rf),
            "GB" => Ok(Algorithm::Gb),
            "SVM_RBF" | "SVM" => Ok(Algorithm::SvmRbf),
            _ => Err(Error::Config(format!("unknown algorithm {s:?}"))),
        }
    }
}

/// A hyperparameter value; `None` stands for "unbounded" (RF `max_depth`).
pub type ParamValue = Option<f64>;

/// Hyperparameters keyed by name, sorted so that iteration order gives the
/// lexicographic parameter tuple.
pub type ParamMap = BTreeMap<String, ParamValue>;

pub const DEFAULT_QDA_REG_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm")]
pub enum ModelSpec {
    #[serde(rename = "LR")]
    Logistic {
        #[serde(rename = "C")]
        c: f64,
    },
    #[serde(rename = "QDA")]
    Qda { reg_eps: f64 },
    #[serde(rename = "RF")]
    RandomForest {
        n_estimators: usize,
        max_depth: Option<usize>,
    },
    #[serde(rename = "GB")]
    GradientBoosting {
        learning_rate: f64,
        max_depth: usize,
        n_estimators: usize,
    },
    #[serde(rename = "SVM_RBF")]
    SvmRbf {
        #[serde(rename = "C")]
        c: f64,
        gamma: f64,
    },
}

impl ModelSpec {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            ModelSpec::Logistic { .. } => Algorithm::Lr,
            ModelSpec::Qda { .. } => Algorithm::Qda,
            ModelSpec::RandomForest { .. } => Algorithm::Rf,
            ModelSpec::GradientBoosting { .. } => Algorithm::Gb,
            ModelSpec::SvmRbf { .. } => Algorithm::SvmRbf,
        }
    }

    pub fn params(&self) -> ParamMap {
        let mut m = ParamMap::new();
        let mut put = |k: &str, v: ParamValue| {
            m.insert(k.to_string(), v);
        };
        match *self {
            ModelSpec::Logistic { c } => put("C", Some(c)),
            ModelSpec::Qda { reg_eps } => put("reg_eps", Some(reg_eps)),
            ModelSpec::RandomForest { n_estimators, max_depth } => {
                put("n_estimators", Some(n_estimators as f64));
                put("max_depth", max_depth.map(|d| d as f64));
            }
            ModelSpec::GradientBoosting {
                learning_rate,
                max_depth,
                n_estimators,
            } => {
                put("learning_rate", Some(learning_rate));
                put("max_depth", Some(max_depth as f64));
                put("n_estimators", Some(n_estimators as f64));
            }
            ModelSpec::SvmRbf { c, gamma } => {
                put("C", Some(c));
                put("gamma", Some(gamma));
            }
        }
        m
    }

    /// Builds a validated spec; parameters not given take their defaults.
    pub fn from_params(algorithm: Algorithm, params: &ParamMap) -> Result<Self> {
        for k in params.keys() {
            if !algorithm.param_names().contains(&k.as_str()) {
                return Err(Error::Config(format!("{algorithm} has no hyperparameter {k:?}")));
            }
        }
        let num = |k: &str, default: f64| -> Result<f64> {
            match params.get(k) {
                None => Ok(default),
                Some(Some(v)) => Ok(*v),
                Some(None) => Err(Error::Config(format!("{algorithm}: {k} cannot be null"))),
            }
        };
        let count = |k: &str, default: usize| -> Result<usize> {
            let v = num(k, default as f64)?;
            if v < 1.0 || v.fract() != 0.0 {
                return Err(Error::Config(format!("{algorithm}: {k} must be a positive integer, got {v}")));
            }
            Ok(v as usize)
        };
        let spec = match algorithm {
            Algorithm::Lr => ModelSpec::Logistic { c: num("C", 1.0)? },
            Algorithm::Qda => ModelSpec::Qda {
                reg_eps: num("reg_eps", DEFAULT_QDA_REG_EPS)?,
            },
            Algorithm::Rf => ModelSpec::RandomForest {
                n_estimators: count("n_estimators", 100)?,
                max_depth: match params.get("max_depth") {
                    None | Some(None) => None,
                    Some(Some(_)) => Some(count("max_depth", 1)?),
                },
            },
            Algorithm::Gb => ModelSpec::GradientBoosting {
                learning_rate: num("learning_rate", 0.1)?,
                max_depth: count("max_depth", 3)?,
                n_estimators: count("n_estimators", 100)?,
            },
            Algorithm::SvmRbf => ModelSpec::SvmRbf {
                c: num("C", 1.0)?,
                gamma: num("gamma", 0.1)?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            ModelSpec::Logistic { c } if !(c > 0.0 && c.is_finite()) => bad(format!("LR: C must be > 0, got {c}")),
            ModelSpec::Qda { reg_eps } if !(reg_eps >= 0.0 && reg_eps.is_finite()) => {
                bad(format!("QDA: reg_eps must be >= 0, got {reg_eps}"))
            }
            ModelSpec::RandomForest { n_estimators: 0, .. } => bad("RF: n_estimators must be >= 1".into()),
            ModelSpec::RandomForest { max_depth: Some(0), .. } => bad("RF: max_depth must be >= 1".into()),
            ModelSpec::GradientBoosting {
                learning_rate,
                max_depth,
                n_estimators,
            } => {
                if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
                    bad(format!("GB: learning_rate must be >= 0, got {learning_rate}"))
                } else if max_depth == 0 || n_estimators == 0 {
                    bad("GB: max_depth and n_estimators must be >= 1".into())
                } else {
                    Ok(())
                }
            }
            ModelSpec::SvmRbf { c, gamma } if !(c > 0.0 && gamma > 0.0 && c.is_finite() && gamma.is_finite()) => {
                bad(format!("SVM_RBF: C and gamma must be > 0, got C={c} gamma={gamma}"))
            }
            _ => Ok(()),
        }
    }

    /// Compact `name=value` rendering, e.g. `C=10, gamma=0.1`.
    pub fn describe(&self) -> String {
        self.params()
            .iter()
            .map(|(k, v)| match v {
                Some(v) => format!("{k}={v}"),
                None => format!("{k}=None"),
            })
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedParams {
    Logistic(LogisticModel),
    Qda(QdaModel),
    Forest(ForestModel),
    Boosting(BoostingModel),
    Svm(SvmModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub fitted: FittedParams,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub labels: Vec<Label>,
    pub scores: Vec<f64>,
}

/// Shared input checks for every fit.
pub(crate) fn validate_training(x: &Matrix, y: &[Label]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::Input(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    if x.rows() < 2 {
        return Err(Error::Input(format!("need at least 2 rows, got {}", x.rows())));
    }
    if x.cols() == 0 {
        return Err(Error::Input("no feature columns".into()));
    }
    if !x.all_finite() {
        return Err(Error::Input("features contain non-finite values".into()));
    }
    let pos = y.iter().filter(|l| l.is_positive()).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::Input("both classes must be present".into()));
    }
    Ok(())
}

pub fn fit(spec: &ModelSpec, x: &Matrix, y: &[Label], seed: u64) -> Result<TrainedModel> {
    spec.validate()?;
    validate_training(x, y)?;
    let fitted = match *spec {
        ModelSpec::Logistic { c } => FittedParams::Logistic(logistic::fit_logistic_l1(x, y, c, seed)?),
        ModelSpec::Qda { reg_eps } => FittedParams::Qda(qda::fit_qda(x, y, reg_eps)?),
        ModelSpec::RandomForest { n_estimators, max_depth } => {
            FittedParams::Forest(forest::fit_random_forest(x, y, n_estimators, max_depth, seed)?)
        }
        ModelSpec::GradientBoosting {
            learning_rate,
            max_depth,
            n_estimators,
        } => FittedParams::Boosting(boosting::fit_gradient_boosting(x, y, learning_rate, max_depth, n_estimators, seed)?),
        ModelSpec::SvmRbf { c, gamma } => FittedParams::Svm(svm::fit_svm_rbf(x, y, c, gamma, seed)?),
    };
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        spec: spec.clone(),
        fitted,
        meta: TrainingMeta {
            seed,
            n: x.rows(),
            d: x.cols(),
        },
    })
}

impl TrainedModel {
    /// Real-valued score for one row; see the module table for its meaning.
    pub fn score_row(&self, row: &[f64]) -> f64 {
        match &self.fitted {
            FittedParams::Logistic(m) => m.decision(row),
            FittedParams::Qda(m) => m.decision(row),
            FittedParams::Forest(m) => m.vote_fraction(row),
            FittedParams::Boosting(m) => m.raw_score(row),
            FittedParams::Svm(m) => m.decision(row),
        }
    }

    pub fn label_for_score(&self, score: f64) -> Label {
        match self.fitted {
            FittedParams::Forest(_) => Label::from_bool(score > 0.5),
            _ => Label::from_bool(score > 0.0),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: TrainedModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                model.format_version
            )));
        }
        Ok(model)
    }
}

pub fn predict(model: &TrainedModel, x: &Matrix) -> Result<Predictions> {
    if x.rows() == 0 {
        return Ok(Predictions::default());
    }
    if x.cols() != model.meta.d {
        return Err(Error::Input(format!(
            "model trained on {} features, got {}",
            model.meta.d,
            x.cols()
        )));
    }
    let scores: Vec<f64> = x.row_iter().map(|r| model.score_row(r)).collect();
    let labels = scores.iter().map(|&s| model.label_for_score(s)).collect();
    Ok(Predictions { labels, scores })
}
