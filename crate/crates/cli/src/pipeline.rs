//! End-to-end run: scene -> features -> screen -> per (variety, algorithm)
//! tuning, fitting, bootstrap, permutation and importance.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rsd_core::dataset::{self, FeatureTable, Label, ScalerParams, SplitIndices, VarietySelection};
use rsd_core::eval::{self, ImportanceReport, Metric, MetricDistribution, PermutationResult};
use rsd_core::geodata;
use rsd_core::indices::{self, BandRoleMap};
use rsd_core::learners::{self, Algorithm, ModelSpec, TrainedModel};
use rsd_core::matrix::Matrix;
use rsd_core::screening;
use rsd_core::synth;
use rsd_core::tuning::{self, AuditEntry, HalvingResult};
use rsd_core::{derive_seed, Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::fsutil::{self, atomic_write, slug};

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Balanced, split and scaled data for one variety setting.
pub struct Prepared {
    pub selection: VarietySelection,
    pub x_train: Matrix,
    pub y_train: Vec<Label>,
    pub x_test: Matrix,
    pub y_test: Vec<Label>,
    pub class_counts: (usize, usize),
    pub balanced: FeatureTable,
    pub split: SplitIndices,
    pub scaler: ScalerParams,
}

impl Prepared {
    pub fn balanced_counts(&self) -> (usize, usize) {
        self.balanced.class_counts()
    }
}

pub fn prepare(
    table: &FeatureTable,
    selection: &VarietySelection,
    test_fraction: f64,
    master: u64,
) -> Result<Prepared> {
    let v = selection.as_str();
    let sub = dataset::filter_by_variety(table, selection)?;
    let balanced = dataset::downsample_balance(&sub, derive_seed!(master, "balance", v))?;
    let split = dataset::train_test_split(&balanced.labels, test_fraction, derive_seed!(master, "split", v))?;
    let scaler = ScalerParams::fit(&balanced.matrix, &split.train)?;
    let pick = |rows: &[usize]| -> Result<(Matrix, Vec<Label>)> {
        Ok((
            scaler.transform(&balanced.matrix.select_rows(rows))?,
            rows.iter().map(|&i| balanced.labels[i]).collect(),
        ))
    };
    let (x_train, y_train) = pick(&split.train)?;
    let (x_test, y_test) = pick(&split.test)?;
    Ok(Prepared {
        selection: selection.clone(),
        x_train,
        y_train,
        x_test,
        y_test,
        class_counts: sub.class_counts(),
        balanced,
        split,
        scaler,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub tune: u64,
    pub fit: u64,
    pub bootstrap: u64,
    pub permutation: u64,
}

impl CellSeeds {
    pub fn derive(master: u64, variety: &str, alg: Algorithm) -> Self {
        let a = alg.as_str();
        CellSeeds {
            tune: derive_seed!(master, "tune", variety, a),
            fit: derive_seed!(master, "fit", variety, a),
            bootstrap: derive_seed!(master, "bootstrap", variety, a),
            permutation: derive_seed!(master, "permutation", variety, a),
        }
    }
}

/// Per-metric summary written next to the distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub median: f64,
    #[serde(rename = "p2.5")]
    pub p2_5: f64,
    #[serde(rename = "p97.5")]
    pub p97_5: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub variety: String,
    pub algorithm: Algorithm,
    pub spec: ModelSpec,
    pub cv_mean_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub b_bootstrap: usize,
    pub b_permutation: usize,
    pub metrics: BTreeMap<Metric, MetricSummary>,
    /// Null and observed accuracy ranges intersect.
    pub overlap: bool,
    pub seeds: CellSeeds,
}

#[allow(clippy::too_many_arguments)]
pub fn summarize(
    variety: &str,
    algorithm: Algorithm,
    tuned: &HalvingResult,
    boot: &MetricDistribution,
    perm: &PermutationResult,
    n_train: usize,
    n_test: usize,
    seeds: CellSeeds,
) -> CellSummary {
    let metrics = Metric::ALL
        .iter()
        .map(|&m| {
            (
                m,
                MetricSummary {
                    median: boot.median.get(m),
                    p2_5: boot.p2_5.get(m),
                    p97_5: boot.p97_5.get(m),
                    p_value: perm.p_values.get(m),
                },
            )
        })
        .collect();
    CellSummary {
        variety: variety.to_string(),
        algorithm,
        spec: tuned.best.clone(),
        cv_mean_accuracy: tuned.best_score,
        n_train,
        n_test,
        b_bootstrap: boot.samples.len(),
        b_permutation: perm.null.samples.len(),
        metrics,
        overlap: perm.accuracy_overlap(boot),
        seeds,
    }
}

pub fn cell_stem(variety: &str, alg: Algorithm) -> String {
    format!("{}__{}", slug(variety), alg.as_str())
}

pub struct CellResult {
    pub summary: CellSummary,
    pub audit: Vec<AuditEntry>,
    pub model: TrainedModel,
    pub importance: Option<ImportanceReport>,
}

/// Files of one finished cell, relative to the run directory.
pub fn cell_files(variety: &str, alg: Algorithm) -> Vec<PathBuf> {
    let stem = cell_stem(variety, alg);
    let mut v = vec![
        PathBuf::from("distributions").join(format!("{stem}__bootstrap.csv")),
        PathBuf::from("distributions").join(format!("{stem}__null.csv")),
        PathBuf::from("distributions").join(format!("{stem}__summary.json")),
        PathBuf::from("models").join(format!("{stem}.json")),
    ];
    if alg.is_tree_based() {
        v.push(PathBuf::from("importance").join(format!("{stem}.csv")));
    }
    v
}

fn run_cell(
    cfg: &RunConfig,
    prep: &Prepared,
    alg: Algorithm,
    feature_names: &[String],
    out: &Path,
) -> Result<CellResult> {
    let variety = prep.selection.as_str();
    let seeds = CellSeeds::derive(cfg.seed, variety, alg);
    let tuned = tuning::halving_grid_search(
        alg,
        &cfg.grid(alg),
        &prep.x_train,
        &prep.y_train,
        cfg.k,
        cfg.halving,
        seeds.tune,
    )?;
    let model = learners::fit(&tuned.best, &prep.x_train, &prep.y_train, seeds.fit)?;
    let boot = eval::bootstrap_evaluate(&model, &prep.x_test, &prep.y_test, cfg.b_bootstrap, seeds.bootstrap)?;
    let perm = eval::permutation_test(
        &tuned.best,
        &prep.x_train,
        &prep.y_train,
        &prep.x_test,
        &prep.y_test,
        &boot.median,
        cfg.b_permutation,
        seeds.permutation,
    )?;
    let importance = if alg.is_tree_based() {
        Some(eval::impurity_importance(&model, feature_names)?)
    } else {
        None
    };
    let summary = summarize(variety, alg, &tuned, &boot, &perm, prep.y_train.len(), prep.y_test.len(), seeds);

    let files = cell_files(variety, alg);
    atomic_write(&out.join(&files[0]), |p| boot.write_csv(p))?;
    atomic_write(&out.join(&files[1]), |p| perm.null.write_csv(p))?;
    fsutil::write_json(&out.join(&files[2]), &summary)?;
    fsutil::write_string(&out.join(&files[3]), &model.to_json()?)?;
    if let Some(imp) = &importance {
        atomic_write(&out.join(&files[4]), |p| imp.write_csv(p))?;
    }
    Ok(CellResult {
        summary,
        audit: tuned.audit,
        model,
        importance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub variety: String,
    pub algorithm: Algorithm,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub seeds: CellSeeds,
    pub files: Vec<PathBuf>,
}

impl CellStatus {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub cells: Vec<CellStatus>,
}

impl RunOutcome {
    pub fn failed(&self) -> impl Iterator<Item = &CellStatus> {
        self.cells.iter().filter(|c| !c.is_ok())
    }
}

/// Loads rasters and blocks (writing a synthetic scene first when asked)
/// and returns the feature build.
fn build_features(cfg: &RunConfig, out: &Path) -> Result<(indices::FeatureBuild, serde_json::Value)> {
    let (manifest, blocks, source) = match (&cfg.inputs, &cfg.synth) {
        (Some(inputs), _) => (
            inputs.manifest.clone(),
            inputs.blocks.clone(),
            json!({"kind": "files", "manifest": inputs.manifest, "blocks": inputs.blocks}),
        ),
        (None, Some(s)) => {
            let synth_cfg = s.to_config();
            let scene = synth::generate_synthetic_scene(&synth_cfg)?;
            let files = synth::write_scene(&scene, &out.join("scene"))?;
            (
                files.manifest,
                files.blocks,
                json!({"kind": "synthetic", "source": s, "class_counts": scene.table.class_counts()}),
            )
        }
        (None, None) => return Err(Error::Config("config needs inputs or synth".into())),
    };
    let stack = geodata::load_band_manifest(&manifest, cfg.scale)?;
    let blocks = geodata::load_blocks(&blocks)?;
    let pixels = geodata::extract_labeled_pixels(&stack, &blocks)?;
    let roles = BandRoleMap::with_overrides(cfg.band_roles.iter().map(|(a, b)| (a.as_str(), b.as_str())))?;
    Ok((indices::build_feature_matrix(&pixels, &roles)?, source))
}

fn status_of(variety: &str, alg: Algorithm, master: u64, r: &Result<CellResult>) -> CellStatus {
    let seeds = CellSeeds::derive(master, variety, alg);
    match r {
        Ok(_) => CellStatus {
            variety: variety.to_string(),
            algorithm: alg,
            status: "ok".into(),
            error_kind: None,
            message: None,
            seeds,
            files: cell_files(variety, alg),
        },
        Err(e) => CellStatus {
            variety: variety.to_string(),
            algorithm: alg,
            status: "error".into(),
            error_kind: Some(format!("{:?}", e.kind()).to_lowercase()),
            message: Some(e.to_string()),
            seeds,
            files: Vec::new(),
        },
    }
}

/// Defaults in effect for this build, recorded so runs are comparable.
pub fn decision_defaults(cfg: &RunConfig) -> serde_json::Value {
    let grids: BTreeMap<&str, tuning::ParamGrid> =
        cfg.algorithms.iter().map(|&a| (a.as_str(), cfg.grid(a))).collect();
    json!({
        "test_fraction": cfg.test_fraction,
        "k_folds": cfg.k,
        "halving_eta": cfg.halving.eta,
        "halving_r0": cfg.halving.r0.map_or_else(|| json!("max(4k, n / eta^floor(log_eta m))"), |r| json!(r)),
        "halving_resource": "training rows",
        "grids": grids,
        "tie_break": "lexicographically smallest parameter tuple, null below numbers",
        "scaler": "z-score, population std, fit on training rows only",
        "balancing": "downsample majority class",
        "split": "stratified, largest-remainder apportionment",
        "screen_test": "Welch two-sample t, two-sided",
        "screen_alpha": cfg.alpha,
        "screen_correction": "Bonferroni over all (variety, feature) tests",
        "lr_objective": "||w||_1 + C * sum log(1 + exp(-y f))",
        "lr_tolerance": 1e-6,
        "qda_reg_eps_default": learners::DEFAULT_QDA_REG_EPS,
        "qda_priors": "empirical",
        "rf_max_features": "ceil(sqrt(D))",
        "rf_tie_vote": "negative",
        "gb_leaf_values": "one Newton step",
        "svm_tolerance": 1e-3,
        "svm_max_iterations": 1_000_000,
        "b_bootstrap": cfg.b_bootstrap,
        "b_permutation": cfg.b_permutation,
        "bootstrap": "resample fixed test predictions",
        "permutation": "shuffle training labels only",
        "p_value": "(1 + #{null >= observed median}) / (B + 1)",
        "median": "per metric over the same resamples",
        "percentiles": "linear interpolation",
    })
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    for sub in ["", "distributions", "importance", "models"] {
        fsutil::create_dir(&out.join(sub))?;
    }

    let (build, source) = build_features(cfg, &out)?;
    let table = build.table;
    atomic_write(&out.join("features.csv"), |p| table.write_csv(p))?;

    let selections = cfg.selections(&table.distinct_varieties())?;
    let screen = screening::screen_table(&table, &selections, cfg.alpha)?;
    atomic_write(&out.join("screen.csv"), |p| screen.write_csv(p))?;

    let prepared: Vec<Result<Prepared>> = selections
        .iter()
        .map(|s| prepare(&table, s, cfg.test_fraction, cfg.seed))
        .collect();

    let cells: Vec<(usize, Algorithm)> = (0..selections.len())
        .flat_map(|s| cfg.algorithms.iter().map(move |&a| (s, a)))
        .collect();
    let results: Vec<Result<CellResult>> = cells
        .par_iter()
        .map(|&(s, alg)| match &prepared[s] {
            Ok(p) => run_cell(cfg, p, alg, &table.feature_names, &out),
            Err(e) => Err(Error::Input(format!("variety setting {} unavailable: {e}", selections[s]))),
        })
        .collect();

    let statuses: Vec<CellStatus> = cells
        .iter()
        .zip(&results)
        .map(|(&(s, alg), r)| status_of(selections[s].as_str(), alg, cfg.seed, r))
        .collect();
    let ok: Vec<&CellResult> = results.iter().filter_map(|r| r.as_ref().ok()).collect();

    let audit_rows: Vec<(String, String, &AuditEntry)> = ok
        .iter()
        .flat_map(|c| {
            c.audit
                .iter()
                .map(|e| (c.summary.variety.clone(), c.summary.algorithm.to_string(), e))
        })
        .collect();
    atomic_write(&out.join("tuning_audit.csv"), |p| tuning::write_audit_csv(p, &audit_rows))?;
    let summaries: Vec<&CellSummary> = ok.iter().map(|c| &c.summary).collect();
    atomic_write(&out.join("metrics_table.csv"), |p| write_metrics_table(p, &summaries))?;
    let hp: Vec<HyperparamRow> = summaries
        .iter()
        .map(|s| HyperparamRow {
            model: s.algorithm,
            variety: s.variety.clone(),
            spec: s.spec.clone(),
            mean_cv_accuracy: s.cv_mean_accuracy,
            tuned_on: "train_split".into(),
        })
        .collect();
    atomic_write(&out.join("hyperparams_table.csv"), |p| write_hyperparams_table(p, &hp))?;

    let prep_info: Vec<serde_json::Value> = selections
        .iter()
        .zip(&prepared)
        .map(|(s, p)| match p {
            Ok(p) => json!({
                "variety": s.as_str(),
                "class_counts": {"positive": p.class_counts.0, "negative": p.class_counts.1},
                "balanced_counts": {"positive": p.balanced_counts().0, "negative": p.balanced_counts().1},
                "n_train": p.y_train.len(),
                "n_test": p.y_test.len(),
                "seeds": {
                    "balance": derive_seed!(cfg.seed, "balance", s.as_str()),
                    "split": derive_seed!(cfg.seed, "split", s.as_str()),
                },
            }),
            Err(e) => json!({"variety": s.as_str(), "error": e.to_string()}),
        })
        .collect();
    let manifest = json!({
        "tool": "rsd",
        "version": env!("CARGO_PKG_VERSION"),
        "master_seed": cfg.seed,
        "config": cfg,
        "decisions": decision_defaults(cfg),
        "source": source,
        "features": {
            "rows": table.len(),
            "columns": table.feature_names,
            "dropped_pixels": build.dropped,
            "drop_reasons": build.drop_reasons,
        },
        "screen": {"m": screen.m, "alpha": screen.alpha, "threshold": screen.threshold,
                   "significant": screen.significant().count()},
        "variety_settings": prep_info,
        "cells": statuses,
    });
    fsutil::write_json(&out.join(MANIFEST_FILE), &manifest)?;

    Ok(RunOutcome {
        output_dir: out,
        cells: statuses,
    })
}

/// One row per (model, variety, class): precision and recall medians for
/// that class plus the accuracy median.
pub fn write_metrics_table(path: &Path, cells: &[&CellSummary]) -> Result<()> {
    let err = |e: csv::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["model", "variety", "class", "precision", "recall", "accuracy"])
        .map_err(err)?;
    for c in cells {
        let acc = c.metrics[&Metric::Accuracy].median;
        for (class, p, r) in [
            (Label::Positive, Metric::PrecisionPositive, Metric::RecallPositive),
            (Label::Negative, Metric::PrecisionNegative, Metric::RecallNegative),
        ] {
            w.write_record([
                c.algorithm.as_str(),
                &c.variety,
                class.as_str(),
                &c.metrics[&p].median.to_string(),
                &c.metrics[&r].median.to_string(),
                &acc.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub struct HyperparamRow {
    pub model: Algorithm,
    pub variety: String,
    pub spec: ModelSpec,
    pub mean_cv_accuracy: f64,
    pub tuned_on: String,
}

pub fn write_hyperparams_table(path: &Path, rows: &[HyperparamRow]) -> Result<()> {
    let err = |e: csv::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["model", "variety", "hyperparameters", "params_json", "mean_cv_accuracy", "tuned_on"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.model.as_str(),
            &r.variety,
            &r.spec.describe(),
            &serde_json::to_string(&r.spec.params())?,
            &r.mean_cv_accuracy.to_string(),
            &r.tuned_on,
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
