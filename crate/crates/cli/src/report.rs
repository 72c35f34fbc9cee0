//! Consolidates a finished run directory into one summary table.

use std::path::{Path, PathBuf};

use rsd_core::eval::{self, Metric, MetricDistribution, PermutationResult};
use rsd_core::learners::Algorithm;
use rsd_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::fsutil::{self, atomic_write};
use crate::pipeline::{cell_files, CellStatus, CellSummary, MetricSummary, MANIFEST_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: Algorithm,
    pub variety: String,
    pub hyperparameters: String,
    pub cv_mean_accuracy: f64,
    pub metrics: std::collections::BTreeMap<Metric, MetricSummary>,
    pub overlap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub json: PathBuf,
    pub csv: PathBuf,
}

#[derive(Deserialize)]
struct ManifestCells {
    cells: Vec<CellStatus>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Rebuilds one row from the cell's distribution files; the medians and
/// p values are recomputed rather than copied from the cell summary.
fn cell_row(dir: &Path, cell: &CellStatus) -> Result<ReportRow> {
    let files = cell_files(&cell.variety, cell.algorithm);
    let boot = MetricDistribution::read_csv(&dir.join(&files[0]), cell.seeds.bootstrap)?;
    let null = MetricDistribution::read_csv(&dir.join(&files[1]), cell.seeds.permutation)?;
    let summary: CellSummary = read_json(&dir.join(&files[2]))?;
    let p_values = eval::permutation_p_values(&null.samples, &boot.median);
    let perm = PermutationResult {
        null,
        observed_median: boot.median,
        p_values,
    };
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
    Ok(ReportRow {
        model: cell.algorithm,
        variety: cell.variety.clone(),
        hyperparameters: summary.spec.describe(),
        cv_mean_accuracy: summary.cv_mean_accuracy,
        metrics,
        overlap: perm.accuracy_overlap(&boot),
    })
}

/// Writes `summary.json` and `summary.csv` into `dir`.
pub fn emit_report(dir: &Path) -> Result<Report> {
    let manifest: ManifestCells = read_json(&dir.join(MANIFEST_FILE))?;
    let missing: Vec<String> = manifest
        .cells
        .iter()
        .filter(|c| !c.is_ok() || cell_files(&c.variety, c.algorithm).iter().any(|f| !dir.join(f).is_file()))
        .map(|c| format!("{}/{}", c.variety, c.algorithm))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Input(format!("incomplete run, missing cells: {}", missing.join(", "))));
    }
    let mut rows = manifest
        .cells
        .iter()
        .map(|c| cell_row(dir, c))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| (a.model, &a.variety).cmp(&(b.model, &b.variety)));

    let json = dir.join("summary.json");
    let csv = dir.join("summary.csv");
    fsutil::write_json(&json, &rows)?;
    atomic_write(&csv, |p| write_summary_csv(p, &rows))?;
    Ok(Report { rows, json, csv })
}

fn write_summary_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let err = |e: csv::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec![
        "model".to_string(),
        "variety".into(),
        "hyperparameters".into(),
        "cv_mean_accuracy".into(),
    ];
    for m in Metric::ALL {
        for stat in ["median", "p2.5", "p97.5", "p_value"] {
            header.push(format!("{}_{stat}", m.as_str()));
        }
    }
    header.push("null_overlap".into());
    w.write_record(&header).map_err(err)?;
    for r in rows {
        let mut rec = vec![
            r.model.to_string(),
            r.variety.clone(),
            r.hyperparameters.clone(),
            r.cv_mean_accuracy.to_string(),
        ];
        for m in Metric::ALL {
            let s = &r.metrics[&m];
            rec.extend([s.median, s.p2_5, s.p97_5, s.p_value].iter().map(f64::to_string));
        }
        rec.push(r.overlap.to_string());
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
