//! Dataset assembly: variety filtering, class balancing, stratified
//! train/test split and standard scaling.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeds;

/// Disease status of a block, and therefore of every pixel inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::Positive, Label::Negative];

    pub fn is_positive(self) -> bool {
        matches!(self, Label::Positive)
    }

    /// +1 for positive, -1 for negative.
    pub fn sign(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "Positive",
            Label::Negative => "Negative",
        }
    }

    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Positive" | "1" => Ok(Label::Positive),
            "Negative" | "0" => Ok(Label::Negative),
            other => Err(Error::Input(format!(
                "label must be \"Positive\" or \"Negative\", got {other:?}"
            ))),
        }
    }
}

/// Counts of (positive, negative) labels.
pub fn class_counts(labels: &[Label]) -> (usize, usize) {
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    (pos, labels.len() - pos)
}

/// Per-pixel feature matrix together with labels and provenance columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub matrix: Matrix,
    pub labels: Vec<Label>,
    pub varieties: Vec<String>,
    pub block_ids: Vec<String>,
    pub feature_names: Vec<String>,
}

impl FeatureTable {
    pub fn new(
        matrix: Matrix,
        labels: Vec<Label>,
        varieties: Vec<String>,
        block_ids: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = matrix.rows();
        if labels.len() != n || varieties.len() != n || block_ids.len() != n {
            return Err(Error::Input(format!(
                "table columns disagree: {n} rows, {} labels, {} varieties, {} block ids",
                labels.len(),
                varieties.len(),
                block_ids.len()
            )));
        }
        if feature_names.len() != matrix.cols() {
            return Err(Error::Input(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                matrix.cols()
            )));
        }
        if n == 0 || matrix.cols() == 0 {
            return Err(Error::EmptyDataset(format!(
                "feature table has shape {n}x{}",
                matrix.cols()
            )));
        }
        Ok(Self {
            matrix,
            labels,
            varieties,
            block_ids,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.matrix.cols()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        class_counts(&self.labels)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Distinct varieties in first-appearance order.
    pub fn distinct_varieties(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for v in &self.varieties {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
        out
    }

    /// Rows in the given order. Does not enforce non-emptiness.
    pub fn select_rows(&self, idx: &[usize]) -> FeatureTable {
        FeatureTable {
            matrix: self.matrix.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            varieties: idx.iter().map(|&i| self.varieties[i].clone()).collect(),
            block_ids: idx.iter().map(|&i| self.block_ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Writes the table as CSV: feature columns, then block_id, variety, label.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_with_split(path, None)
    }

    /// Same as [`write_csv`](Self::write_csv) with an extra `split` column.
    pub fn write_csv_with_split(&self, path: &Path, split: Option<&SplitIndices>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.extend(["block_id", "variety", "label"]);
        if split.is_some() {
            header.push("split");
        }
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        let tags = split.map(|s| s.tags(self.len()));
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.matrix.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.block_ids[i].clone());
            rec.push(self.varieties[i].clone());
            rec.push(self.labels[i].to_string());
            if let Some(tags) = &tags {
                rec.push(tags[i].to_string());
            }
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a table written by [`write_csv`](Self::write_csv) or
    /// [`write_csv_with_split`](Self::write_csv_with_split). The split
    /// column, when present, is returned alongside.
    pub fn read_csv(path: &Path) -> Result<(FeatureTable, Option<SplitIndices>)> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| csv_err(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let pos = |name: &str| header.iter().position(|h| h == name);
        let (Some(bi), Some(vi), Some(li)) = (pos("block_id"), pos("variety"), pos("label")) else {
            return Err(ingest(path, "header", "missing block_id/variety/label columns"));
        };
        let si = pos("split");
        let meta = [Some(bi), Some(vi), Some(li), si];
        let feature_cols: Vec<usize> = (0..header.len())
            .filter(|c| !meta.contains(&Some(*c)))
            .collect();
        let feature_names: Vec<String> = feature_cols.iter().map(|&c| header[c].clone()).collect();

        let mut matrix = Matrix::empty(feature_cols.len());
        let (mut labels, mut varieties, mut block_ids) = (Vec::new(), Vec::new(), Vec::new());
        let (mut train, mut test) = (Vec::new(), Vec::new());
        let mut row = vec![0.0; feature_cols.len()];
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            for (k, &c) in feature_cols.iter().enumerate() {
                let raw = rec.get(c).unwrap_or("");
                row[k] = raw.parse().map_err(|_| {
                    ingest(path, &header[c], &format!("row {line}: not a number: {raw:?}"))
                })?;
            }
            matrix.push_row(&row)?;
            block_ids.push(rec.get(bi).unwrap_or("").to_string());
            varieties.push(rec.get(vi).unwrap_or("").to_string());
            labels.push(
                rec.get(li)
                    .unwrap_or("")
                    .parse()
                    .map_err(|e: Error| ingest(path, "label", &format!("row {line}: {e}")))?,
            );
            if let Some(si) = si {
                match rec.get(si).unwrap_or("") {
                    "train" => train.push(line),
                    "test" => test.push(line),
                    other => {
                        return Err(ingest(path, "split", &format!("row {line}: {other:?}")));
                    }
                }
            }
        }
        let table = FeatureTable::new(matrix, labels, varieties, block_ids, feature_names)?;
        let split = si.map(|_| SplitIndices { train, test });
        Ok((table, split))
    }
}

pub(crate) fn ingest(path: &Path, field: &str, message: &str) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        field: field.to_string(),
        message: message.to_string(),
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    ingest(path, "csv", &e.to_string())
}

/// A specific variety, or all varieties pooled.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarietySelection {
    All,
    Variety(String),
}

impl VarietySelection {
    pub const ALL_TAG: &'static str = "ALL";

    pub fn as_str(&self) -> &str {
        match self {
            VarietySelection::All => Self::ALL_TAG,
            VarietySelection::Variety(v) => v,
        }
    }
}

impl FromStr for VarietySelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(if s == Self::ALL_TAG {
            VarietySelection::All
        } else {
            VarietySelection::Variety(s.to_string())
        })
    }
}

impl fmt::Display for VarietySelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for VarietySelection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for VarietySelection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().expect("infallible"))
    }
}

pub fn filter_by_variety(table: &FeatureTable, selection: &VarietySelection) -> Result<FeatureTable> {
    match selection {
        VarietySelection::All => Ok(table.clone()),
        VarietySelection::Variety(v) => {
            let idx: Vec<usize> = (0..table.len()).filter(|&i| &table.varieties[i] == v).collect();
            if idx.is_empty() {
                return Err(Error::EmptySelection(v.clone()));
            }
            Ok(table.select_rows(&idx))
        }
    }
}

/// Row indices selected by [`downsample_balance`], in ascending order.
pub fn balanced_indices(labels: &[Label], seed: u64) -> Result<Vec<usize>> {
    let (pos, neg): (Vec<usize>, Vec<usize>) =
        (0..labels.len()).partition(|&i| labels[i].is_positive());
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Balance(format!(
            "need both classes, got {} positive and {} negative",
            pos.len(),
            neg.len()
        )));
    }
    let (minority, mut majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut rng = seeds::rng(seed);
    majority.shuffle(&mut rng);
    majority.truncate(minority.len());
    let mut keep = minority;
    keep.extend(majority);
    keep.sort_unstable();
    Ok(keep)
}

/// Reduces the majority class to the minority count by sampling without
/// replacement. Surviving rows keep their original relative order.
pub fn downsample_balance(table: &FeatureTable, seed: u64) -> Result<FeatureTable> {
    let keep = balanced_indices(&table.labels, seed)?;
    Ok(table.select_rows(&keep))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// "train"/"test" tag per row of an n-row table.
    pub fn tags(&self, n: usize) -> Vec<&'static str> {
        let mut tags = vec!["train"; n];
        for &i in &self.test {
            tags[i] = "test";
        }
        tags
    }
}

/// Stratified split: the test side holds `round(n * test_fraction)` rows,
/// apportioned to classes by largest remainder.
pub fn train_test_split(labels: &[Label], test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    let n = labels.len();
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 rows, got {n}")));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;

    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    // largest-remainder apportionment of n_test across classes
    let quotas: Vec<(Label, f64)> = by_class
        .iter()
        .map(|(&l, rows)| (l, rows.len() as f64 * n_test as f64 / n as f64))
        .collect();
    let mut alloc: BTreeMap<Label, usize> =
        quotas.iter().map(|&(l, q)| (l, q.floor() as usize)).collect();
    let mut leftover = n_test - alloc.values().sum::<usize>();
    let mut order: Vec<(Label, f64)> = quotas.iter().map(|&(l, q)| (l, q - q.floor())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (l, _) in order {
        if leftover == 0 {
            break;
        }
        *alloc.get_mut(&l).unwrap() += 1;
        leftover -= 1;
    }

    let mut rng = seeds::rng(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (label, mut rows) in by_class {
        let k = alloc[&label];
        if k == 0 || k == rows.len() {
            return Err(Error::Split(format!(
                "class {label} with {} rows cannot appear on both sides at fraction {test_fraction}",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        test.extend_from_slice(&rows[..k]);
        train.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose spread is numerically zero; these are only centered.
    pub zero_std: Vec<bool>,
}

impl ScalerParams {
    pub fn fit(x: &Matrix, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset("scaler fitted on zero rows".into()));
        }
        let d = x.cols();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in rows {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &i in rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
        let zero_std = std
            .iter()
            .zip(&mean)
            .map(|(s, m)| *s <= 1e-12 * (1.0 + m.abs()))
            .collect();
        Ok(Self { mean, std, zero_std })
    }

    pub fn fit_all(x: &Matrix) -> Result<Self> {
        let rows: Vec<usize> = (0..x.rows()).collect();
        Self::fit(x, &rows)
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Input(format!(
                "scaler fitted on {} features, got {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v -= self.mean[j];
                if !self.zero_std[j] {
                    *v /= self.std[j];
                }
            }
        }
        Ok(out)
    }
}

pub fn fit_standard_scaler(table: &FeatureTable, rows: &[usize]) -> Result<ScalerParams> {
    ScalerParams::fit(&table.matrix, rows)
}

pub fn apply_scaler(params: &ScalerParams, table: &FeatureTable) -> Result<FeatureTable> {
    Ok(FeatureTable {
        matrix: params.transform(&table.matrix)?,
        ..table.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(labels: &[Label], varieties: &[&str]) -> FeatureTable {
        let n = labels.len();
        let m = Matrix::new(n, 2, (0..2 * n).map(|v| v as f64).collect()).unwrap();
        FeatureTable::new(
            m,
            labels.to_vec(),
            varieties.iter().map(|s| s.to_string()).collect(),
            (0..n).map(|i| format!("b{i}")).collect(),
            vec!["f0".into(), "f1".into()],
        )
        .unwrap()
    }

    fn labels(pos: usize, neg: usize) -> Vec<Label> {
        let mut l = vec![Label::Positive; pos];
        l.extend(vec![Label::Negative; neg]);
        l
    }

    #[test]
    fn filter_selects_variety_rows() {
        let t = table(&labels(2, 2), &["Q200", "Q208", "Q200", "Q208"]);
        let f = filter_by_variety(&t, &"Q200".parse().unwrap()).unwrap();
        assert_eq!(f.len(), 2);
        assert!(f.varieties.iter().all(|v| v == "Q200"));
        assert_eq!(filter_by_variety(&t, &VarietySelection::All).unwrap(), t);
        assert!(matches!(
            filter_by_variety(&t, &"Q999".parse().unwrap()),
            Err(Error::EmptySelection(_))
        ));
    }

    #[test]
    fn balance_matches_minority_count() {
        for (pos, neg) in [(145, 389), (2754, 3469), (886, 1769), (869, 649)] {
            let l = labels(pos, neg);
            let keep = balanced_indices(&l, 7).unwrap();
            let sub: Vec<Label> = keep.iter().map(|&i| l[i]).collect();
            let m = pos.min(neg);
            assert_eq!(class_counts(&sub), (m, m));
        }
    }

    #[test]
    fn balanced_input_is_unchanged() {
        let l = labels(50, 50);
        assert_eq!(balanced_indices(&l, 3).unwrap(), (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn balance_needs_two_classes() {
        assert!(matches!(balanced_indices(&labels(4, 0), 1), Err(Error::Balance(_))));
    }

    #[test]
    fn split_290_at_twenty_percent() {
        let l = labels(145, 145);
        let s = train_test_split(&l, 0.2, 11).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (232, 58));
        let test_pos = s.test.iter().filter(|&&i| l[i].is_positive()).count();
        assert_eq!(test_pos, 29);
        assert_eq!(s, train_test_split(&l, 0.2, 11).unwrap());
    }

    #[test]
    fn split_rejects_singleton_class() {
        let l = labels(1, 20);
        assert!(matches!(train_test_split(&l, 0.2, 0), Err(Error::Split(_))));
        assert!(train_test_split(&l, 1.0, 0).is_err());
    }

    #[test]
    fn scaler_population_std() {
        let x = Matrix::from_rows(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]).unwrap();
        let p = ScalerParams::fit_all(&x).unwrap();
        assert_eq!(p.mean, vec![2.0, 5.0]);
        assert!((p.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(p.zero_std, vec![false, true]);
        let t = p.transform(&x).unwrap();
        assert_eq!(t.column(1).collect::<Vec<_>>(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn scaler_uses_only_given_rows() {
        let x = Matrix::from_rows(&[[0.0], [2.0], [10.0], [20.0]]).unwrap();
        let train = ScalerParams::fit(&x, &[0, 1]).unwrap();
        let own = ScalerParams::fit(&x, &[2, 3]).unwrap();
        let a = train.transform(&x).unwrap();
        let b = own.transform(&x).unwrap();
        assert_eq!(train.mean, vec![1.0]);
        assert_ne!(a.get(2, 0), b.get(2, 0));
    }

    #[test]
    fn csv_round_trip_with_split() {
        let t = table(&labels(3, 3), &["A"; 6]);
        let s = train_test_split(&t.labels, 0.34, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        t.write_csv_with_split(&p, Some(&s)).unwrap();
        let (back, split) = FeatureTable::read_csv(&p).unwrap();
        assert_eq!(back, t);
        assert_eq!(split.unwrap(), s);
    }

    proptest! {
        #[test]
        fn split_partitions_rows(pos in 2usize..60, neg in 2usize..60, frac in 0.1f64..0.5, seed: u64) {
            let l = labels(pos, neg);
            if let Ok(s) = train_test_split(&l, frac, seed) {
                let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..pos + neg).collect::<Vec<_>>());
                prop_assert_eq!(s.test.len(), ((pos + neg) as f64 * frac).round() as usize);
            }
        }

        #[test]
        fn balance_is_subset_and_exact(pos in 1usize..80, neg in 1usize..80, seed: u64) {
            let l = labels(pos, neg);
            let keep = balanced_indices(&l, seed).unwrap();
            prop_assert!(keep.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(keep.iter().all(|&i| i < l.len()));
            let sub: Vec<Label> = keep.iter().map(|&i| l[i]).collect();
            let (p, n) = class_counts(&sub);
            prop_assert_eq!(p, n);
            prop_assert_eq!(keep, balanced_indices(&l, seed).unwrap());
        }
    }
}
