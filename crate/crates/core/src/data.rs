//! Datasets, CSV ingestion, hold-out splits, fold plans and synthetic data.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::rng::{self, streams};
use crate::scalar::sigmoid;

/// Feature matrix with binary labels and an optional protected-group column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<u8>,
    group: Option<Vec<u32>>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<u8>,
        group: Option<Vec<u32>>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 {
            return Err(AuditError::invalid("dataset has no rows"));
        }
        if labels.len() != n {
            return Err(AuditError::Schema(format!(
                "{} labels for {} rows",
                labels.len(),
                n
            )));
        }
        if let Some(row) = labels.iter().position(|&y| y > 1) {
            return Err(AuditError::NonBinaryLabel {
                row,
                value: labels[row].to_string(),
            });
        }
        if let Some(g) = &group {
            if g.len() != n {
                return Err(AuditError::Schema(format!(
                    "{} group ids for {} rows",
                    g.len(),
                    n
                )));
            }
        }
        if feature_names.len() != d {
            return Err(AuditError::Schema(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                d
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(AuditError::invalid("non-finite feature value"));
        }
        let features = features.as_standard_layout().into_owned();
        Ok(Self {
            features,
            labels,
            group,
            feature_names,
        })
    }

    /// Build from row vectors with generated feature names `x0..x{d-1}`.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>, group: Option<Vec<u32>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(AuditError::Schema("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let features = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| AuditError::Schema(e.to_string()))?;
        Self::new(features, labels, group, default_names(d))
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.features.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n()).map(move |i| self.row(i))
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn group(&self) -> Option<&[u32]> {
        self.group.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn prevalence(&self) -> f64 {
        self.positives() as f64 / self.n() as f64
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.positives();
        p > 0 && p < self.n()
    }

    /// Error unless both classes are present; trainers call this.
    pub fn require_both_classes(&self, context: &str) -> Result<()> {
        if self.has_both_classes() {
            Ok(())
        } else {
            Err(AuditError::SingleClass(format!(
                "{context}: only label {} present in {} rows",
                self.labels[0],
                self.n()
            )))
        }
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self
                .features
                .select(Axis(0), indices)
                .as_standard_layout()
                .into_owned(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            group: self
                .group
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i]).collect()),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Copy with column `j` replaced.
    pub fn with_column(&self, j: usize, values: &[f64]) -> Dataset {
        let mut out = self.clone();
        out.features
            .column_mut(j)
            .assign(&ndarray::ArrayView1::from(values));
        out
    }

    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Dataset> {
        Dataset::new(
            self.features.clone(),
            labels,
            self.group.clone(),
            self.feature_names.clone(),
        )
    }

    /// Stack two datasets with identical schema.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.feature_names != other.feature_names {
            return Err(AuditError::Schema("feature names differ".into()));
        }
        let features =
            ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()])
                .map_err(|e| AuditError::Schema(e.to_string()))?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let group = match (&self.group, &other.group) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            (None, None) => None,
            _ => {
                return Err(AuditError::Schema(
                    "group column present on one side only".into(),
                ))
            }
        };
        Dataset::new(features, labels, group, self.feature_names.clone())
    }
}

pub fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Impute {
    #[default]
    Error,
    Mean,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvOptions {
    pub label_column: String,
    /// Used when a column of this name exists.
    pub group_column: Option<String>,
    pub impute: Impute,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label_column: "label".into(),
            group_column: Some("group".into()),
            impute: Impute::Error,
        }
    }
}

/// A loaded dataset plus non-fatal findings (single-class labels, imputed cells).
#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<CsvLoad> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, opts)
}

pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<CsvLoad> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = headers
        .iter()
        .position(|h| *h == opts.label_column)
        .ok_or_else(|| {
            AuditError::Schema(format!("missing label column {:?}", opts.label_column))
        })?;
    let group_idx = opts
        .group_column
        .as_ref()
        .and_then(|g| headers.iter().position(|h| h == g));
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_idx && Some(c) != group_idx)
        .collect();
    let d = feature_cols.len();

    let mut cells: Vec<Option<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let label = record.get(label_idx).unwrap_or("").trim();
        labels.push(match label {
            "0" | "0.0" => 0u8,
            "1" | "1.0" => 1u8,
            other => {
                return Err(AuditError::NonBinaryLabel {
                    row,
                    value: other.to_string(),
                })
            }
        });
        if let Some(gi) = group_idx {
            let raw = record.get(gi).unwrap_or("").trim();
            let g = raw.parse::<u32>().map_err(|_| AuditError::NonNumeric {
                row,
                column: headers[gi].clone(),
                value: raw.to_string(),
            })?;
            groups.push(g);
        }
        for &c in &feature_cols {
            let raw = record.get(c).unwrap_or("").trim();
            if raw.is_empty() {
                if opts.impute == Impute::Error {
                    return Err(AuditError::MissingValue {
                        row,
                        column: headers[c].clone(),
                    });
                }
                cells.push(None);
            } else {
                let v = raw
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| AuditError::NonNumeric {
                        row,
                        column: headers[c].clone(),
                        value: raw.to_string(),
                    })?;
                cells.push(Some(v));
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(AuditError::Schema("csv has no data rows".into()));
    }

    let mut warnings = Vec::new();
    let mut values = vec![0.0; n * d];
    for j in 0..d {
        let observed: Vec<f64> = (0..n).filter_map(|i| cells[i * d + j]).collect();
        let missing = n - observed.len();
        if missing > 0 && observed.is_empty() {
            return Err(AuditError::Schema(format!(
                "column {:?} has no observed values to impute from",
                headers[feature_cols[j]]
            )));
        }
        let mean = observed.iter().sum::<f64>() / observed.len().max(1) as f64;
        if missing > 0 {
            warnings.push(format!(
                "column {:?}: {missing} missing value(s) mean-imputed with {mean}",
                headers[feature_cols[j]]
            ));
        }
        for i in 0..n {
            values[i * d + j] = cells[i * d + j].unwrap_or(mean);
        }
    }

    let features = Array2::from_shape_vec((n, d), values).expect("shape matches buffer");
    let names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    let dataset = Dataset::new(features, labels, group_idx.map(|_| groups), names)?;
    if !dataset.has_both_classes() {
        let msg = format!(
            "label column contains a single class ({}); trainers will reject this data",
            dataset.labels[0]
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(CsvLoad { dataset, warnings })
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ds.feature_names.clone();
    header.push("label".into());
    if ds.group.is_some() {
        header.push("group".into());
    }
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.labels[i].to_string());
        if let Some(g) = &ds.group {
            rec.push(g[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

fn class_indices(labels: &[u8]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        out[y as usize].push(i);
    }
    out
}

/// Train/test index sets for a hold-out split, both sorted ascending.
pub fn holdout_indices(
    ds: &Dataset,
    train_fraction: f64,
    stratified: bool,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(AuditError::invalid(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut rng = rng::stream(seed, streams::SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let pools: Vec<Vec<usize>> = if stratified {
        let classes = class_indices(&ds.labels);
        for (c, idx) in classes.iter().enumerate() {
            if idx.len() < 2 {
                return Err(AuditError::invalid(format!(
                    "stratified split needs at least 2 rows of class {c}, found {}",
                    idx.len()
                )));
            }
        }
        classes.into()
    } else {
        vec![(0..ds.n()).collect()]
    };
    for mut pool in pools {
        pool.shuffle(&mut rng);
        let mut k = (train_fraction * pool.len() as f64).round() as usize;
        if stratified {
            k = k.clamp(1, pool.len() - 1);
        }
        train.extend_from_slice(&pool[..k]);
        test.extend_from_slice(&pool[k..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(AuditError::invalid(format!(
            "hold-out split of {} rows at fraction {train_fraction} leaves an empty side",
            ds.n()
        )));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_holdout(
    ds: &Dataset,
    train_fraction: f64,
    stratified: bool,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (train, test) = holdout_indices(ds, train_fraction, stratified, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMode {
    Plain,
    Stratified,
    Loocv,
}

/// Assignment of every row to one of `k` test folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub stratified: bool,
    pub seed: u64,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }

    /// Per-fold `[negatives, positives]`.
    pub fn class_counts(&self, labels: &[u8]) -> Vec<[usize; 2]> {
        let mut counts = vec![[0, 0]; self.k];
        for (i, &f) in self.assignments.iter().enumerate() {
            counts[f][labels[i] as usize] += 1;
        }
        counts
    }

    pub fn validate_for(&self, ds: &Dataset) -> Result<()> {
        if self.n() != ds.n() {
            return Err(AuditError::invalid(format!(
                "fold plan covers {} rows, dataset has {}",
                self.n(),
                ds.n()
            )));
        }
        if self.assignments.iter().any(|&f| f >= self.k) || self.fold_sizes().contains(&0) {
            return Err(AuditError::invalid(
                "fold plan has an empty or out-of-range fold",
            ));
        }
        Ok(())
    }
}

/// Fold plan by round-robin dealing of a shuffled order.
///
/// Stratified mode deals each class's shuffled rows in turn, continuing the
/// round-robin position across classes, so per-fold class counts are within
/// one of `n_c / k` and fold sizes within one of `n / k`.
pub fn make_folds(ds: &Dataset, k: usize, mode: FoldMode, seed: u64) -> Result<FoldPlan> {
    let n = ds.n();
    if mode == FoldMode::Loocv {
        return Ok(FoldPlan {
            k: n,
            assignments: (0..n).collect(),
            stratified: false,
            seed,
        });
    }
    if k < 2 || k > n {
        return Err(AuditError::invalid(format!(
            "k = {k} must satisfy 2 <= k <= n = {n}"
        )));
    }
    let mut rng = rng::stream(seed, streams::FOLDS);
    let order: Vec<usize> = match mode {
        FoldMode::Plain => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx
        }
        FoldMode::Stratified => {
            let [mut neg, mut pos] = class_indices(&ds.labels);
            neg.shuffle(&mut rng);
            pos.shuffle(&mut rng);
            // minority class first so small classes spread from fold 0
            if pos.len() <= neg.len() {
                pos.into_iter().chain(neg).collect()
            } else {
                neg.into_iter().chain(pos).collect()
            }
        }
        FoldMode::Loocv => unreachable!(),
    };
    let mut assignments = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = pos % k;
    }
    Ok(FoldPlan {
        k,
        assignments,
        stratified: mode == FoldMode::Stratified,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Per-group shift applied to every feature mean and to the label logit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupShift {
    pub feature_offset: f64,
    pub logit_offset: f64,
}

/// Logistic data generator: `x ~ N(offset_g, 1)`,
/// `y ~ Bernoulli(sigmoid(w.x + intercept + logit_offset_g + noise * e))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub true_weights: Vec<f64>,
    pub intercept: f64,
    /// One entry per group; empty means no group column.
    #[serde(default)]
    pub group_shift: Vec<GroupShift>,
    /// Standard deviation of extra Gaussian noise on the logit.
    #[serde(default)]
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n: usize, true_weights: Vec<f64>, intercept: f64, seed: u64) -> Self {
        Self {
            n,
            true_weights,
            intercept,
            group_shift: Vec::new(),
            noise: 0.0,
            seed,
        }
    }

    pub fn d(&self) -> usize {
        self.true_weights.len()
    }
}

/// Synthetic dataset together with each row's true event probability.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub true_probability: Vec<f64>,
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    gen_synthetic_with_truth(spec).map(|s| s.dataset)
}

pub fn gen_synthetic_with_truth(spec: &SyntheticSpec) -> Result<Synthetic> {
    let finite = spec.true_weights.iter().all(|w| w.is_finite())
        && spec.intercept.is_finite()
        && spec.noise.is_finite()
        && spec.noise >= 0.0
        && spec
            .group_shift
            .iter()
            .all(|g| g.feature_offset.is_finite() && g.logit_offset.is_finite());
    if !finite {
        return Err(AuditError::invalid("non-finite synthetic spec"));
    }
    if spec.n == 0 {
        return Err(AuditError::invalid("synthetic spec with n = 0"));
    }
    let d = spec.d();
    let mut rng = rng::stream(spec.seed, streams::SYNTHETIC);
    let mut values = Vec::with_capacity(spec.n * d);
    let mut labels = Vec::with_capacity(spec.n);
    let mut groups = Vec::with_capacity(spec.n);
    let mut truth = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let (g, shift) = if spec.group_shift.is_empty() {
            (0u32, GroupShift::default())
        } else {
            let g = rng.random_range(0..spec.group_shift.len());
            (g as u32, spec.group_shift[g])
        };
        let mut z = spec.intercept + shift.logit_offset;
        for w in &spec.true_weights {
            let x: f64 = shift.feature_offset + rng.sample::<f64, _>(StandardNormal);
            z += w * x;
            values.push(x);
        }
        if spec.noise > 0.0 {
            z += spec.noise * rng.sample::<f64, _>(StandardNormal);
        }
        let p = sigmoid(z);
        let u: f64 = rng.random();
        labels.push(u8::from(u < p));
        groups.push(g);
        truth.push(p);
    }
    let features = Array2::from_shape_vec((spec.n, d), values).expect("shape matches buffer");
    let group = (!spec.group_shift.is_empty()).then_some(groups);
    Ok(Synthetic {
        dataset: Dataset::new(features, labels, group, default_names(d))?,
        true_probability: truth,
    })
}

/// Distinct group ids present, ascending.
pub fn group_ids(groups: &[u32]) -> Vec<u32> {
    groups
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}
