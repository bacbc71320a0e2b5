//! Cross-validation (plain, stratified, LOOCV, repeated, nested) and
//! external-cohort evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{self, Binning, CalibrationFit};
use crate::data::{make_folds, Dataset, FoldMode, FoldPlan};
use crate::error::{AuditError, Result};
use crate::metrics::{self, classification_metrics, confusion};
use crate::models::{self, Architecture, Model, TrainConfig};
use crate::predictions::PredictionSet;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auc,
    Accuracy,
    Sensitivity,
    Specificity,
    LogLoss,
    Brier,
    /// Ten equal-width bins.
    Ece,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Auc,
        Metric::Accuracy,
        Metric::Sensitivity,
        Metric::Specificity,
        Metric::LogLoss,
        Metric::Brier,
        Metric::Ece,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::Accuracy => "accuracy",
            Metric::Sensitivity => "sensitivity",
            Metric::Specificity => "specificity",
            Metric::LogLoss => "log_loss",
            Metric::Brier => "brier",
            Metric::Ece => "ece",
        }
    }

    /// `None` where the metric is undefined, e.g. AUC on a single-class fold.
    pub fn evaluate(&self, preds: &PredictionSet<f64>) -> Option<f64> {
        let mean = |f: &dyn Fn(f64, u8) -> f64| {
            preds
                .scores()
                .iter()
                .zip(preds.labels())
                .map(|(&p, &y)| f(p, y))
                .sum::<f64>()
                / preds.len() as f64
        };
        match self {
            Metric::Auc => metrics::auc(preds).ok(),
            Metric::Accuracy => classification_metrics(&confusion(preds, 0.5)).accuracy,
            Metric::Sensitivity => classification_metrics(&confusion(preds, 0.5)).sensitivity,
            Metric::Specificity => classification_metrics(&confusion(preds, 0.5)).specificity,
            Metric::LogLoss => Some(mean(&|p, y| models::log_loss(p, y))),
            Metric::Brier => Some(mean(&|p, y| (p - f64::from(y)).powi(2))),
            Metric::Ece => {
                calibration::ece(preds, calibration::DEFAULT_BINS, Binning::EqualWidth).ok()
            }
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| AuditError::invalid(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub repeat: usize,
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub test_positives: usize,
    /// Aligned with `CvResult::metrics`.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub metrics: Vec<Metric>,
    pub folds: Vec<FoldRow>,
    /// Mean over the folds where the metric is defined.
    pub mean: Vec<Option<f64>>,
    /// Sample standard deviation over the same folds.
    pub sd: Vec<Option<f64>>,
    /// AUC of the pooled out-of-fold predictions, one per repeat.
    pub pooled_auc: Vec<Option<f64>>,
    pub plans: Vec<FoldPlan>,
}

fn summarize(metrics: &[Metric], folds: &[FoldRow]) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    (0..metrics.len())
        .map(|m| {
            let vals: Vec<f64> = folds.iter().filter_map(|f| f.values[m]).collect();
            if vals.is_empty() {
                return (None, None);
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let sd = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            (Some(mean), Some(sd))
        })
        .unzip()
}

fn fit_fold(
    ds: &Dataset,
    train_idx: &[usize],
    arch: &Architecture,
    cfg: &TrainConfig,
    label: &str,
) -> Result<Model> {
    let train = ds.subset(train_idx);
    train.require_both_classes(label)?;
    models::train(&train, arch, cfg)
}

/// Out-of-fold predictions and per-fold rows for one plan.
fn run_plan(
    ds: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    plan: &FoldPlan,
    metrics: &[Metric],
    repeat: usize,
) -> Result<(Vec<FoldRow>, Option<f64>)> {
    plan.validate_for(ds)?;
    let per_fold: Vec<(FoldRow, Vec<usize>, Vec<f64>)> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let (train_idx, test_idx) = (plan.train_indices(fold), plan.test_indices(fold));
            let model = fit_fold(
                ds,
                &train_idx,
                arch,
                cfg,
                &format!("training side of fold {fold}"),
            )?;
            let test = ds.subset(&test_idx);
            let preds = PredictionSet::from_model(&model, &test)?;
            let row = FoldRow {
                repeat,
                fold,
                n_train: train_idx.len(),
                n_test: test_idx.len(),
                test_positives: test.positives(),
                values: metrics.iter().map(|m| m.evaluate(&preds)).collect(),
            };
            Ok((row, test_idx, preds.scores().to_vec()))
        })
        .collect::<Result<_>>()?;
    let mut pooled = vec![0.0; ds.n()];
    let mut rows = Vec::with_capacity(plan.k);
    for (row, idx, scores) in per_fold {
        for (i, s) in idx.into_iter().zip(scores) {
            pooled[i] = s;
        }
        rows.push(row);
    }
    let pooled_auc = metrics::auc(&PredictionSet::new(ds.labels().to_vec(), pooled)?).ok();
    Ok((rows, pooled_auc))
}

/// Retrain on every fold's training side and score its test side.
pub fn cross_validate(
    ds: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    plan: &FoldPlan,
    metrics: &[Metric],
) -> Result<CvResult> {
    let (folds, pooled) = run_plan(ds, arch, cfg, plan, metrics, 0)?;
    let (mean, sd) = summarize(metrics, &folds);
    Ok(CvResult {
        metrics: metrics.to_vec(),
        folds,
        mean,
        sd,
        pooled_auc: vec![pooled],
        plans: vec![plan.clone()],
    })
}

/// `repeats` independent fold plans (seeds derived from `seed`), results
/// concatenated.
#[allow(clippy::too_many_arguments)]
pub fn repeated_cross_validate(
    ds: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    k: usize,
    mode: FoldMode,
    repeats: usize,
    seed: u64,
    metrics: &[Metric],
) -> Result<CvResult> {
    if repeats == 0 {
        return Err(AuditError::invalid("repeats must be >= 1"));
    }
    let mut folds = Vec::new();
    let mut pooled_auc = Vec::new();
    let mut plans = Vec::new();
    for r in 0..repeats {
        let plan_seed = if r == 0 {
            seed
        } else {
            rng::derive_seed(seed, r as u64)
        };
        let plan = make_folds(ds, k, mode, plan_seed)?;
        let (rows, pooled) = run_plan(ds, arch, cfg, &plan, metrics, r)?;
        folds.extend(rows);
        pooled_auc.push(pooled);
        plans.push(plan);
    }
    let (mean, sd) = summarize(metrics, &folds);
    Ok(CvResult {
        metrics: metrics.to_vec(),
        folds,
        mean,
        sd,
        pooled_auc,
        plans,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Inner-fold training and scoring during hyperparameter selection.
    Selection,
    /// Refit on the outer training side.
    Refit,
    /// Scoring the outer test side.
    Evaluation,
}

/// Rows (as pool indices) touched by one step of nested CV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Access {
    pub outer_fold: usize,
    pub phase: Phase,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedCvResult {
    pub cv: CvResult,
    /// Weight decay chosen for each outer fold.
    pub chosen: Vec<f64>,
    /// Mean inner log-loss per outer fold, aligned with the sorted grid.
    pub inner_loss: Vec<Vec<f64>>,
    pub grid: Vec<f64>,
}

/// Nested CV over a grid of weight-decay values. The inner loop picks the
/// value with the lowest mean inner log-loss (ties go to the smaller value)
/// using only the outer fold's training rows.
#[allow(clippy::too_many_arguments)]
pub fn nested_cross_validate(
    ds: &Dataset,
    arch: &Architecture,
    grid: &[f64],
    outer: &FoldPlan,
    inner_k: usize,
    inner_mode: FoldMode,
    cfg: &TrainConfig,
    metrics: &[Metric],
    observer: Option<&(dyn Fn(&Access) + Sync)>,
) -> Result<NestedCvResult> {
    if grid.is_empty() {
        return Err(AuditError::invalid("empty hyperparameter grid"));
    }
    if grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(AuditError::invalid("grid values must be finite and >= 0"));
    }
    outer.validate_for(ds)?;
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let notify = |a: Access| {
        if let Some(f) = observer {
            f(&a);
        }
    };

    let per_fold: Vec<(f64, Vec<f64>, FoldRow, Vec<usize>, Vec<f64>)> = (0..outer.k)
        .into_par_iter()
        .map(|fold| {
            let (outer_train, outer_test) = (outer.train_indices(fold), outer.test_indices(fold));
            let inner_ds = ds.subset(&outer_train);
            let inner_plan = make_folds(
                &inner_ds,
                inner_k,
                inner_mode,
                rng::derive_seed(outer.seed, fold as u64),
            )?;
            let mut losses = Vec::with_capacity(grid.len());
            for &lambda in &grid {
                let lcfg = TrainConfig {
                    weight_decay: lambda,
                    ..cfg.clone()
                };
                let mut total = 0.0;
                for inner in 0..inner_plan.k {
                    let (tr, te) = (
                        inner_plan.train_indices(inner),
                        inner_plan.test_indices(inner),
                    );
                    let to_pool =
                        |v: &[usize]| v.iter().map(|&i| outer_train[i]).collect::<Vec<_>>();
                    notify(Access {
                        outer_fold: fold,
                        phase: Phase::Selection,
                        rows: [to_pool(&tr), to_pool(&te)].concat(),
                    });
                    let model = fit_fold(
                        &inner_ds,
                        &tr,
                        arch,
                        &lcfg,
                        &format!("inner fold {inner} of outer fold {fold}"),
                    )?;
                    total += models::dataset_log_loss(&model, &inner_ds.subset(&te))?;
                }
                losses.push(total / inner_plan.k as f64);
            }
            let mut best = 0;
            for (i, &l) in losses.iter().enumerate() {
                if l < losses[best] {
                    best = i;
                }
            }
            let chosen = grid[best];
            notify(Access {
                outer_fold: fold,
                phase: Phase::Refit,
                rows: outer_train.clone(),
            });
            let model = fit_fold(
                ds,
                &outer_train,
                arch,
                &TrainConfig {
                    weight_decay: chosen,
                    ..cfg.clone()
                },
                &format!("training side of fold {fold}"),
            )?;
            notify(Access {
                outer_fold: fold,
                phase: Phase::Evaluation,
                rows: outer_test.clone(),
            });
            let test = ds.subset(&outer_test);
            let preds = PredictionSet::from_model(&model, &test)?;
            let row = FoldRow {
                repeat: 0,
                fold,
                n_train: outer_train.len(),
                n_test: outer_test.len(),
                test_positives: test.positives(),
                values: metrics.iter().map(|m| m.evaluate(&preds)).collect(),
            };
            Ok((chosen, losses, row, outer_test, preds.scores().to_vec()))
        })
        .collect::<Result<_>>()?;

    let mut pooled = vec![0.0; ds.n()];
    let mut chosen = Vec::new();
    let mut inner_loss = Vec::new();
    let mut folds = Vec::new();
    for (c, l, row, idx, scores) in per_fold {
        for (i, s) in idx.into_iter().zip(scores) {
            pooled[i] = s;
        }
        chosen.push(c);
        inner_loss.push(l);
        folds.push(row);
    }
    let (mean, sd) = summarize(metrics, &folds);
    Ok(NestedCvResult {
        cv: CvResult {
            metrics: metrics.to_vec(),
            folds,
            mean,
            sd,
            pooled_auc: vec![metrics::auc(&PredictionSet::new(ds.labels().to_vec(), pooled)?).ok()],
            plans: vec![outer.clone()],
        },
        chosen,
        inner_loss,
        grid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalReport {
    pub n: usize,
    pub prevalence: f64,
    pub metrics: Vec<Metric>,
    pub values: Vec<Option<f64>>,
    /// `None` when the intercept/slope fit fails; the reason is in `warnings`.
    pub calibration: Option<CalibrationFit<f64>>,
    pub warnings: Vec<String>,
}

/// Score a fixed model on a separate cohort. No training happens.
pub fn evaluate_external(
    model: &Model,
    external: &Dataset,
    metrics: &[Metric],
) -> Result<ExternalReport> {
    if model.input_dim != external.d() {
        return Err(AuditError::Schema(format!(
            "model expects {} features, external cohort has {}",
            model.input_dim,
            external.d()
        )));
    }
    if !model.feature_names.is_empty() && model.feature_names != external.feature_names() {
        return Err(AuditError::Schema(format!(
            "feature names differ: model {:?}, external cohort {:?}",
            model.feature_names,
            external.feature_names()
        )));
    }
    let preds = PredictionSet::from_model(model, external)?;
    let mut warnings = Vec::new();
    let calibration = match calibration::intercept_slope(&preds) {
        Ok(fit) => Some(fit),
        Err(e) => {
            warnings.push(format!("calibration not estimated: {e}"));
            None
        }
    };
    Ok(ExternalReport {
        n: external.n(),
        prevalence: external.prevalence(),
        metrics: metrics.to_vec(),
        values: metrics.iter().map(|m| m.evaluate(&preds)).collect(),
        calibration,
        warnings,
    })
}
