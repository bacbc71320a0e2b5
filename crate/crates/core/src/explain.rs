//! Post-hoc explanations: permutation importance, exact Shapley values and
//! surrogate trees.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{AuditError, Result};
use crate::metrics;
use crate::models::{self, Model, Predictor};
use crate::predictions::PredictionSet;
use crate::rng::{self, streams};

/// Exact enumeration evaluates `2^d` coalitions.
pub const MAX_SHAPLEY_FEATURES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMetric {
    #[default]
    Auc,
    Accuracy,
    /// Negated mean log-loss, so larger is better like the others.
    NegLogLoss,
}

impl ImportanceMetric {
    pub fn evaluate(&self, labels: &[u8], scores: &[f64]) -> Result<f64> {
        match self {
            ImportanceMetric::Auc => {
                metrics::auc(&PredictionSet::new(labels.to_vec(), scores.to_vec())?)
            }
            ImportanceMetric::Accuracy => {
                let hits = labels
                    .iter()
                    .zip(scores)
                    .filter(|(&y, &p)| u8::from(p >= 0.5) == y)
                    .count();
                Ok(hits as f64 / labels.len() as f64)
            }
            ImportanceMetric::NegLogLoss => {
                let total: f64 = labels
                    .iter()
                    .zip(scores)
                    .map(|(&y, &p)| models::log_loss(p, y))
                    .sum();
                Ok(-total / labels.len() as f64)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Permutation,
    Shapley,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub feature_names: Vec<String>,
    pub values: Vec<f64>,
    pub scope: Scope,
    pub method: Method,
}

fn check_width(model: &dyn Predictor, d: usize) -> Result<()> {
    if model.n_features() != d {
        return Err(AuditError::Schema(format!(
            "model expects {} features, data has {d}",
            model.n_features()
        )));
    }
    Ok(())
}

/// `baseline - mean(metric with column j shuffled)` for every feature.
///
/// Each feature gets its own seeded stream, so results do not depend on the
/// order features are processed in.
pub fn permutation_importance(
    model: &dyn Predictor,
    ds: &Dataset,
    metric: ImportanceMetric,
    n_repeats: usize,
    seed: u64,
) -> Result<Attribution> {
    check_width(model, ds.d())?;
    if n_repeats == 0 {
        return Err(AuditError::invalid("n_repeats must be >= 1"));
    }
    let labels = ds.labels();
    let baseline = metric.evaluate(labels, &model.predict_rows(ds))?;
    let values = (0..ds.d())
        .into_par_iter()
        .map(|j| {
            let mut r = rng::stream(rng::derive_seed(seed, j as u64), streams::PERMUTATION);
            let column: Vec<f64> = ds.rows().map(|x| x[j]).collect();
            let mut drops = Vec::with_capacity(n_repeats);
            let mut buf = vec![0.0; ds.d()];
            for _ in 0..n_repeats {
                let mut perm = column.clone();
                perm.shuffle(&mut r);
                let scores: Vec<f64> = ds
                    .rows()
                    .zip(&perm)
                    .map(|(x, &v)| {
                        buf.copy_from_slice(x);
                        buf[j] = v;
                        model.predict(&buf)
                    })
                    .collect();
                drops.push(baseline - metric.evaluate(labels, &scores)?);
            }
            Ok(drops.iter().sum::<f64>() / n_repeats as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Attribution {
        feature_names: ds.feature_names().to_vec(),
        values,
        scope: Scope::Global,
        method: Method::Permutation,
    })
}

/// Value of every coalition: mean prediction over background rows with the
/// coalition's features taken from `x`. Bit `j` of the index marks feature `j`.
pub fn coalition_values(
    model: &dyn Predictor,
    x: &[f64],
    background: &Dataset,
) -> Result<Vec<f64>> {
    let d = x.len();
    check_width(model, d)?;
    check_width(model, background.d())?;
    if d > MAX_SHAPLEY_FEATURES {
        return Err(AuditError::TooManyFeatures {
            d,
            max: MAX_SHAPLEY_FEATURES,
        });
    }
    let m = background.n() as f64;
    Ok((0..1usize << d)
        .into_par_iter()
        .map(|mask| {
            let mut z = vec![0.0; d];
            let mut total = 0.0;
            for b in background.rows() {
                for j in 0..d {
                    z[j] = if mask >> j & 1 == 1 { x[j] } else { b[j] };
                }
                total += model.predict(&z);
            }
            total / m
        })
        .collect())
}

/// Exact Shapley values of `model` at `x`, absent features averaged over
/// `background`. Contributions are sorted before summation so exchangeable
/// features receive bit-identical values.
pub fn shapley_exact(
    model: &dyn Predictor,
    x: &[f64],
    background: &Dataset,
) -> Result<Attribution> {
    let d = x.len();
    let v = coalition_values(model, x, background)?;
    // weight(s) = s! (d - s - 1)! / d!
    let weight: Vec<f64> = (0..d)
        .map(|s| {
            let mut w = 1.0 / d as f64;
            // 1 / C(d - 1, s)
            for i in 0..s {
                w *= (i + 1) as f64 / (d - 1 - i) as f64;
            }
            w
        })
        .collect();
    let values = (0..d)
        .map(|j| {
            let bit = 1usize << j;
            let mut terms: Vec<f64> = (0..1usize << d)
                .filter(|m| m & bit == 0)
                .map(|m| weight[m.count_ones() as usize] * (v[m | bit] - v[m]))
                .collect();
            terms.sort_by(f64::total_cmp);
            terms.iter().sum()
        })
        .collect();
    Ok(Attribution {
        feature_names: background.feature_names().to_vec(),
        values,
        scope: Scope::Local,
        method: Method::Shapley,
    })
}

/// Share of `eval` rows where both models fall on the same side of 0.5.
pub fn surrogate_fidelity(
    task: &dyn Predictor,
    surrogate: &dyn Predictor,
    eval: &Dataset,
) -> Result<f64> {
    check_width(task, eval.d())?;
    check_width(surrogate, eval.d())?;
    let agree = eval
        .rows()
        .filter(|x| (task.predict(x) >= 0.5) == (surrogate.predict(x) >= 0.5))
        .count();
    Ok(agree as f64 / eval.n() as f64)
}

/// Tree trained on the task model's thresholded predictions.
pub fn fit_surrogate_tree(
    task: &dyn Predictor,
    ds: &Dataset,
    max_depth: usize,
    min_leaf: usize,
) -> Result<Model> {
    check_width(task, ds.d())?;
    let labels = ds
        .rows()
        .map(|x| u8::from(task.predict(x) >= 0.5))
        .collect();
    models::train_tree(&ds.with_labels(labels)?, max_depth, min_leaf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub fidelity: f64,
    /// Leaf count.
    pub parsimony: usize,
    pub depth: usize,
}

pub fn surrogate_report(
    task: &dyn Predictor,
    surrogate: &Model,
    eval: &Dataset,
) -> Result<SurrogateReport> {
    Ok(SurrogateReport {
        fidelity: surrogate_fidelity(task, surrogate, eval)?,
        parsimony: surrogate.complexity(),
        depth: surrogate
            .tree_depth()
            .ok_or_else(|| AuditError::Unsupported("surrogate must be a tree".into()))?,
    })
}
