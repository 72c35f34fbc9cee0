//! Two-sample significance screening of features with Bonferroni correction.
//!
//! The screen is informative: it reports which bands and indices separate
//! positive from negative pixels per variety, but does not gate the
//! classifier feature set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{csv_err, FeatureTable, VarietySelection};
use crate::error::{Error, Result};
use crate::special::student_t_two_sided;

/// Floor applied to the squared standard error.
pub const VARIANCE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

/// Welch's unequal-variance t-test, two-sided.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Input(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Input("t-test samples contain non-finite values".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    let diff = ma - mb;

    let welch_den = sa * sa / (na - 1.0) + sb * sb / (nb - 1.0);
    let df = if welch_den > 0.0 && se2 > 0.0 {
        se2 * se2 / welch_den
    } else {
        na + nb - 2.0
    };
    if diff == 0.0 {
        return Ok(TTest { t: 0.0, df, p: 1.0 });
    }
    let t = diff / se2.max(VARIANCE_EPSILON).sqrt();
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub variety: String,
    pub feature: String,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub threshold: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    /// Number of tests the threshold was corrected for.
    pub m: usize,
    pub alpha: f64,
    pub threshold: f64,
    pub results: Vec<ScreenResult>,
}

impl ScreenReport {
    pub fn significant(&self) -> impl Iterator<Item = &ScreenResult> {
        self.results.iter().filter(|r| r.significant)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["variety", "feature", "t", "df", "p", "threshold", "significant"])
            .map_err(|e| csv_err(path, e))?;
        for r in &self.results {
            w.write_record([
                r.variety.clone(),
                r.feature.clone(),
                r.t.to_string(),
                r.df.to_string(),
                r.p.to_string(),
                r.threshold.to_string(),
                r.significant.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Flags tests with `p < alpha / m`, where m is the number of tests given.
pub fn bonferroni_screen(tests: Vec<(String, String, TTest)>, alpha: f64) -> Result<ScreenReport> {
    let m = tests.len();
    if m == 0 {
        return Err(Error::Input("no tests to screen".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} not in (0, 1)")));
    }
    let threshold = alpha / m as f64;
    let results = tests
        .into_iter()
        .map(|(variety, feature, tt)| ScreenResult {
            variety,
            feature,
            t: tt.t,
            df: tt.df,
            p: tt.p,
            threshold,
            significant: tt.p < threshold,
        })
        .collect();
    Ok(ScreenReport {
        m,
        alpha,
        threshold,
        results,
    })
}

/// Tests every feature, positive vs negative, within each selection.
pub fn screen_table(table: &FeatureTable, selections: &[VarietySelection], alpha: f64) -> Result<ScreenReport> {
    let mut tests = Vec::new();
    for sel in selections {
        let rows: Vec<usize> = (0..table.len())
            .filter(|&i| match sel {
                VarietySelection::All => true,
                VarietySelection::Variety(v) => &table.varieties[i] == v,
            })
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptySelection(sel.to_string()));
        }
        for (j, name) in table.feature_names.iter().enumerate() {
            let (mut pos, mut neg) = (Vec::new(), Vec::new());
            for &i in &rows {
                let v = table.matrix.get(i, j);
                if table.labels[i].is_positive() {
                    pos.push(v);
                } else {
                    neg.push(v);
                }
            }
            tests.push((sel.to_string(), name.clone(), welch_t_test(&pos, &neg)?));
        }
    }
    bonferroni_screen(tests, alpha)
}
