//! Stage-wise train / evaluate / permtest, sharing seeds with `run` so a
//! staged cell reproduces the corresponding end-to-end cell.

use std::path::{Path, PathBuf};

use rsd_core::dataset::{FeatureTable, Label, ScalerParams, SplitIndices, VarietySelection};
use rsd_core::eval::{self, Metric, MetricDistribution};
use rsd_core::learners::{self, Algorithm, TrainedModel};
use rsd_core::matrix::Matrix;
use rsd_core::tuning::{self, AuditEntry, HalvingConfig, ParamGrid};
use rsd_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::fsutil::{self, atomic_write};
use crate::pipeline::{self, cell_stem, CellSeeds, HyperparamRow, MetricSummary};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// A fitted model plus everything needed to score raw feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub variety: String,
    pub master_seed: u64,
    /// "train_split" or "full".
    pub tuned_on: String,
    pub feature_names: Vec<String>,
    pub scaler: ScalerParams,
    pub cv_mean_accuracy: f64,
    pub model: TrainedModel,
}

impl ModelBundle {
    pub fn algorithm(&self) -> Algorithm {
        self.model.spec.algorithm()
    }

    pub fn seeds(&self) -> CellSeeds {
        CellSeeds::derive(self.master_seed, &self.variety, self.algorithm())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let b: ModelBundle = serde_json::from_str(&text)?;
        if b.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::Input(format!(
                "{}: bundle format {} is not supported (expected {BUNDLE_FORMAT_VERSION})",
                path.display(),
                b.format_version
            )));
        }
        Ok(b)
    }

    /// Scales raw feature rows of `table`, checking the column order first.
    pub fn scaled_rows(&self, table: &FeatureTable, rows: &[usize]) -> Result<(Matrix, Vec<Label>)> {
        if table.feature_names != self.feature_names {
            return Err(Error::Input("feature columns differ from the ones the model was trained on".into()));
        }
        Ok((
            self.scaler.transform(&table.matrix.select_rows(rows))?,
            rows.iter().map(|&i| table.labels[i]).collect(),
        ))
    }
}

pub struct TrainRequest<'a> {
    pub features: &'a Path,
    pub variety: VarietySelection,
    pub algorithm: Algorithm,
    pub grid: ParamGrid,
    pub k: usize,
    pub halving: HalvingConfig,
    pub test_fraction: f64,
    pub seed: u64,
    pub full: bool,
    pub out_dir: &'a Path,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutput {
    pub bundle: PathBuf,
    /// Balanced rows with their train/test tags; absent for `--full`.
    pub split: Option<PathBuf>,
    pub audit: PathBuf,
    pub hyperparams: Option<PathBuf>,
}

/// Tunes and fits one (variety, algorithm) cell. With `full`, tuning and
/// fitting use every balanced row and `hyperparams_table.csv` is written.
pub fn train(req: &TrainRequest) -> Result<TrainOutput> {
    let (table, _) = FeatureTable::read_csv(req.features)?;
    let variety = req.variety.as_str();
    let seeds = CellSeeds::derive(req.seed, variety, req.algorithm);
    fsutil::create_dir(req.out_dir)?;
    let stem = cell_stem(variety, req.algorithm);

    let (x, y, scaler, balanced, split) = if req.full {
        let sub = rsd_core::dataset::filter_by_variety(&table, &req.variety)?;
        let balanced =
            rsd_core::dataset::downsample_balance(&sub, rsd_core::derive_seed!(req.seed, "balance", variety))?;
        let scaler = ScalerParams::fit_all(&balanced.matrix)?;
        let x = scaler.transform(&balanced.matrix)?;
        (x, balanced.labels.clone(), scaler, balanced, None)
    } else {
        let p = pipeline::prepare(&table, &req.variety, req.test_fraction, req.seed)?;
        (p.x_train, p.y_train, p.scaler, p.balanced, Some(p.split))
    };

    let tuned = tuning::halving_grid_search(req.algorithm, &req.grid, &x, &y, req.k, req.halving, seeds.tune)?;
    let model = learners::fit(&tuned.best, &x, &y, seeds.fit)?;
    let bundle = ModelBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        variety: variety.to_string(),
        master_seed: req.seed,
        tuned_on: if req.full { "full" } else { "train_split" }.into(),
        feature_names: table.feature_names.clone(),
        scaler,
        cv_mean_accuracy: tuned.best_score,
        model,
    };

    let bundle_path = req.out_dir.join(format!("{stem}.bundle.json"));
    fsutil::write_json(&bundle_path, &bundle)?;
    let split_path = match &split {
        Some(s) => {
            let p = req.out_dir.join(format!("{stem}.split.csv"));
            atomic_write(&p, |tmp| balanced.write_csv_with_split(tmp, Some(s)))?;
            Some(p)
        }
        None => None,
    };
    let audit_path = req.out_dir.join(format!("{stem}.tuning_audit.csv"));
    let rows: Vec<(String, String, &AuditEntry)> = tuned
        .audit
        .iter()
        .map(|e| (variety.to_string(), req.algorithm.to_string(), e))
        .collect();
    atomic_write(&audit_path, |p| tuning::write_audit_csv(p, &rows))?;
    let hyperparams = if req.full {
        let p = req.out_dir.join("hyperparams_table.csv");
        let row = HyperparamRow {
            model: req.algorithm,
            variety: variety.to_string(),
            spec: tuned.best.clone(),
            mean_cv_accuracy: tuned.best_score,
            tuned_on: "full".into(),
        };
        atomic_write(&p, |tmp| pipeline::write_hyperparams_table(tmp, std::slice::from_ref(&row)))?;
        Some(p)
    } else {
        None
    };
    Ok(TrainOutput {
        bundle: bundle_path,
        split: split_path,
        audit: audit_path,
        hyperparams,
    })
}

fn load_split(path: &Path) -> Result<(FeatureTable, SplitIndices)> {
    let (table, split) = FeatureTable::read_csv(path)?;
    let split = split.ok_or_else(|| Error::Input(format!("{}: no split column", path.display())))?;
    if split.test.is_empty() {
        return Err(Error::Input(format!("{}: no test rows", path.display())));
    }
    Ok((table, split))
}

fn summary_json(dist: &MetricDistribution, p_values: Option<&rsd_core::eval::MetricSample>) -> serde_json::Value {
    let m: std::collections::BTreeMap<Metric, MetricSummary> = Metric::ALL
        .iter()
        .map(|&m| {
            (
                m,
                MetricSummary {
                    median: dist.median.get(m),
                    p2_5: dist.p2_5.get(m),
                    p97_5: dist.p97_5.get(m),
                    p_value: p_values.map_or(f64::NAN, |p| p.get(m)),
                },
            )
        })
        .collect();
    serde_json::to_value(m).unwrap_or_default()
}

/// Bootstraps the bundle's predictions on the test rows of `split_csv`.
/// Returns the path of the written distribution.
pub fn evaluate(bundle_path: &Path, split_csv: &Path, b: usize, out_dir: &Path) -> Result<PathBuf> {
    if b < 1 {
        return Err(Error::Config("bootstrap needs B >= 1".into()));
    }
    let bundle = ModelBundle::load(bundle_path)?;
    let (table, split) = load_split(split_csv)?;
    let (x_test, y_test) = bundle.scaled_rows(&table, &split.test)?;
    let dist = eval::bootstrap_evaluate(&bundle.model, &x_test, &y_test, b, bundle.seeds().bootstrap)?;
    fsutil::create_dir(out_dir)?;
    let stem = cell_stem(&bundle.variety, bundle.algorithm());
    let path = out_dir.join(format!("{stem}__bootstrap.csv"));
    atomic_write(&path, |p| dist.write_csv(p))?;
    let mut summary = summary_json(&dist, None);
    for v in summary.as_object_mut().into_iter().flat_map(|o| o.values_mut()) {
        if let Some(o) = v.as_object_mut() {
            o.remove("p_value");
        }
    }
    fsutil::write_json(&out_dir.join(format!("{stem}__bootstrap_summary.json")), &summary)?;
    Ok(path)
}

/// Label-permutation test against the observed bootstrap median.
pub fn permtest(bundle_path: &Path, split_csv: &Path, bootstrap_csv: &Path, b: usize, out_dir: &Path) -> Result<PathBuf> {
    let bundle = ModelBundle::load(bundle_path)?;
    let seeds = bundle.seeds();
    let (table, split) = load_split(split_csv)?;
    let (x_train, y_train) = bundle.scaled_rows(&table, &split.train)?;
    let (x_test, y_test) = bundle.scaled_rows(&table, &split.test)?;
    let observed = MetricDistribution::read_csv(bootstrap_csv, seeds.bootstrap)?;
    let perm = eval::permutation_test(
        &bundle.model.spec,
        &x_train,
        &y_train,
        &x_test,
        &y_test,
        &observed.median,
        b,
        seeds.permutation,
    )?;
    fsutil::create_dir(out_dir)?;
    let stem = cell_stem(&bundle.variety, bundle.algorithm());
    let path = out_dir.join(format!("{stem}__null.csv"));
    atomic_write(&path, |p| perm.null.write_csv(p))?;
    let summary = serde_json::json!({
        "metrics": summary_json(&observed, Some(&perm.p_values)),
        "overlap": perm.accuracy_overlap(&observed),
        "b_permutation": b,
    });
    fsutil::write_json(&out_dir.join(format!("{stem}__permutation_summary.json")), &summary)?;
    Ok(path)
}
