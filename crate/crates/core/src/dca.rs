//! Decision curve analysis.

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::predictions::PredictionSet;
use crate::scalar::Real;

/// Evenly spaced thresholds `start, start + step, ..., <= stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self {
            start: 0.01,
            stop: 0.99,
            step: 0.01,
        }
    }
}

impl ThresholdGrid {
    pub fn thresholds<T: Real>(&self) -> Result<Vec<T>> {
        let ThresholdGrid { start, stop, step } = *self;
        if !(step > 0.0 && step.is_finite()) {
            return Err(AuditError::invalid("grid step must be positive"));
        }
        if !(start > 0.0 && stop < 1.0) {
            return Err(AuditError::invalid(format!(
                "threshold grid [{start}, {stop}] must lie strictly inside (0, 1)"
            )));
        }
        if stop < start {
            return Err(AuditError::invalid("empty threshold grid"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // rounding keeps 0.01 * k free of accumulated representation noise
        Ok((0..count)
            .map(|i| T::lit(((start + i as f64 * step) * 1e12).round() / 1e12))
            .collect())
    }
}

/// `TP/N - FP/N * t / (1 - t)`.
pub fn net_benefit_counts<T: Real>(tp: usize, fp: usize, n: usize, threshold: T) -> T {
    let n = T::from_count(n);
    let odds = threshold / (T::one() - threshold);
    T::from_count(tp) / n - T::from_count(fp) / n * odds
}

fn check_threshold<T: Real>(t: T) -> Result<()> {
    if t > T::zero() && t < T::one() {
        Ok(())
    } else {
        Err(AuditError::invalid(format!("threshold {t} outside (0, 1)")))
    }
}

/// Net benefit of treating everyone with `p >= threshold`.
pub fn net_benefit<T: Real>(preds: &PredictionSet<T>, threshold: T) -> Result<T> {
    check_threshold(threshold)?;
    let c = crate::metrics::confusion(preds, threshold);
    Ok(net_benefit_counts(c.tp, c.fp, preds.len(), threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparator<T = f64> {
    pub name: String,
    pub net_benefit: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionCurve<T = f64> {
    pub thresholds: Vec<T>,
    pub nb_model: Vec<T>,
    pub nb_treat_all: Vec<T>,
    pub nb_treat_none: Vec<T>,
    pub comparators: Vec<Comparator<T>>,
}

/// Sweep the model over `thresholds`. Each binary test in `binary_tests` is a
/// fixed 0/1 decision per row, so its TP and FP do not move with the threshold.
pub fn decision_curve<T: Real>(
    preds: &PredictionSet<T>,
    thresholds: &[T],
    binary_tests: &[(String, Vec<bool>)],
) -> Result<DecisionCurve<T>> {
    if thresholds.is_empty() {
        return Err(AuditError::invalid("empty threshold grid"));
    }
    for t in thresholds {
        check_threshold(*t)?;
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AuditError::invalid("thresholds must be strictly ascending"));
    }
    let n = preds.len();
    let mut pos: Vec<T> = Vec::new();
    let mut neg: Vec<T> = Vec::new();
    for (&s, &y) in preds.scores().iter().zip(preds.labels()) {
        if y == 1 {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    let sort = |v: &mut Vec<T>| v.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    sort(&mut pos);
    sort(&mut neg);
    let at_or_above = |v: &[T], t: T| v.len() - v.partition_point(|&s| s < t);

    let mut comparators = Vec::with_capacity(binary_tests.len());
    for (name, decisions) in binary_tests {
        if decisions.len() != n {
            return Err(AuditError::Schema(format!(
                "binary test {name:?} has {} rows, predictions have {n}",
                decisions.len()
            )));
        }
        let c = crate::metrics::ConfusionCounts::from_decisions(
            preds.labels(),
            decisions.iter().copied(),
        );
        comparators.push(Comparator {
            name: name.clone(),
            net_benefit: thresholds
                .iter()
                .map(|&t| net_benefit_counts(c.tp, c.fp, n, t))
                .collect(),
        });
    }

    Ok(DecisionCurve {
        thresholds: thresholds.to_vec(),
        nb_model: thresholds
            .iter()
            .map(|&t| net_benefit_counts(at_or_above(&pos, t), at_or_above(&neg, t), n, t))
            .collect(),
        nb_treat_all: thresholds
            .iter()
            .map(|&t| net_benefit_counts(pos.len(), neg.len(), n, t))
            .collect(),
        nb_treat_none: vec![T::zero(); thresholds.len()],
        comparators,
    })
}
