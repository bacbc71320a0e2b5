//! Calibration curves, calibration-in-the-large, calibration slope, ECE and
//! logistic recalibration.
//!
//! `alpha` is the intercept of `logit P(y=1) = alpha + logit(p)` (slope fixed
//! at one); `beta` is the slope of `logit P(y=1) = a + beta * logit(p)`. Both
//! are fitted by damped Newton iterations. ECE uses the class-1 probability as
//! the confidence score.

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::models::PROB_CLAMP;
use crate::predictions::PredictionSet;
use crate::scalar::{logit, sigmoid, Real};

pub const DEFAULT_BINS: usize = 10;
pub const MAX_NEWTON_ITERATIONS: usize = 100;
/// Events and non-events below which calibration estimates are flagged as imprecise.
pub const MIN_EVENTS_FOR_PRECISION: usize = 200;

const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    #[default]
    EqualWidth,
    /// Adaptive: each bin holds `n / n_bins` predictions, plus or minus one.
    EqualFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin<T = f64> {
    pub lower: T,
    pub upper: T,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_predicted: Option<T>,
    pub observed_rate: Option<T>,
}

impl<T: Real> CalibrationBin<T> {
    pub fn center(&self) -> T {
        (self.lower + self.upper) / T::lit(2.0)
    }
}

fn prob_eps<T: Real>() -> T {
    T::lit(PROB_CLAMP).max(T::epsilon())
}

/// Bin index of every prediction.
pub fn assign_bins<T: Real>(scores: &[T], n_bins: usize, binning: Binning) -> Result<Vec<usize>> {
    if n_bins < 1 {
        return Err(AuditError::invalid("n_bins must be >= 1"));
    }
    if binning == Binning::EqualFrequency && scores.len() < n_bins {
        return Err(AuditError::invalid(format!(
            "{} predictions cannot fill {n_bins} bins",
            scores.len()
        )));
    }
    let k = T::from_count(n_bins);
    Ok(match binning {
        Binning::EqualWidth => scores
            .iter()
            .map(|&p| {
                let b = (p * k).floor().to_usize().unwrap_or(0);
                b.min(n_bins - 1)
            })
            .collect(),
        Binning::EqualFrequency => {
            let n = scores.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
            let (base, extra) = (n / n_bins, n % n_bins);
            let mut bins = vec![0; n];
            let mut at = 0;
            for b in 0..n_bins {
                let size = base + usize::from(b < extra);
                for &i in &order[at..at + size] {
                    bins[i] = b;
                }
                at += size;
            }
            bins
        }
    })
}

pub fn calibration_curve<T: Real>(
    preds: &PredictionSet<T>,
    n_bins: usize,
    binning: Binning,
) -> Result<Vec<CalibrationBin<T>>> {
    let scores = preds.scores();
    let bins = assign_bins(scores, n_bins, binning)?;
    let mut count = vec![0usize; n_bins];
    let mut sum_p = vec![T::zero(); n_bins];
    let mut sum_y = vec![0usize; n_bins];
    let mut lo = vec![T::infinity(); n_bins];
    let mut hi = vec![T::neg_infinity(); n_bins];
    for ((&b, &p), &y) in bins.iter().zip(scores).zip(preds.labels()) {
        count[b] += 1;
        sum_p[b] += p;
        sum_y[b] += usize::from(y);
        lo[b] = lo[b].min(p);
        hi[b] = hi[b].max(p);
    }
    let k = T::from_count(n_bins);
    Ok((0..n_bins)
        .map(|b| {
            let (lower, upper) = match binning {
                Binning::EqualWidth => (T::from_count(b) / k, T::from_count(b + 1) / k),
                Binning::EqualFrequency => (lo[b], hi[b]),
            };
            let c = count[b];
            CalibrationBin {
                lower,
                upper,
                count: c,
                mean_predicted: (c > 0).then(|| sum_p[b] / T::from_count(c)),
                observed_rate: (c > 0).then(|| T::from_count(sum_y[b]) / T::from_count(c)),
            }
        })
        .collect())
}

/// `sum_k |B_k| / n * |acc(B_k) - conf(B_k)|`.
pub fn ece<T: Real>(preds: &PredictionSet<T>, n_bins: usize, binning: Binning) -> Result<T> {
    let n = T::from_count(preds.len());
    Ok(calibration_curve(preds, n_bins, binning)?
        .iter()
        .filter_map(|b| {
            let (m, o) = (b.mean_predicted?, b.observed_rate?);
            Some(T::from_count(b.count) / n * (o - m).abs())
        })
        .fold(T::zero(), |a, b| a + b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit<T = f64> {
    /// Calibration-in-the-large.
    pub alpha: T,
    /// Calibration slope.
    pub beta: T,
}

/// `ln(1 + e^z)` without overflow.
fn softplus<T: Real>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn log_likelihood<T: Real>(labels: &[u8], eta: impl Fn(usize) -> T) -> T {
    labels.iter().enumerate().fold(T::zero(), |acc, (i, &y)| {
        let z = eta(i);
        acc + if y == 1 { z } else { T::zero() } - softplus(z)
    })
}

fn diverged(context: &str, step: usize) -> AuditError {
    AuditError::Divergence {
        context: format!("{context} (outcome perfectly separated by the logits?)"),
        step,
    }
}

/// Intercept `a` of `logit P(y) = a + offset_i`.
fn fit_offset<T: Real>(labels: &[u8], offset: &[T]) -> Result<T> {
    let tol = T::fit_tolerance();
    let mut a = T::zero();
    let mut ll = log_likelihood(labels, |i| a + offset[i]);
    for it in 0..MAX_NEWTON_ITERATIONS {
        let (mut g, mut h) = (T::zero(), T::zero());
        for (i, &y) in labels.iter().enumerate() {
            let p = sigmoid(a + offset[i]);
            g += T::from_count(usize::from(y)) - p;
            h += p * (T::one() - p);
        }
        if h <= T::min_positive_value() {
            return Err(diverged("calibration-in-the-large fit", it));
        }
        let mut step = g / h;
        let mut accepted = false;
        for _ in 0..50 {
            let cand = a + step;
            let cand_ll = log_likelihood(labels, |i| cand + offset[i]);
            if cand_ll >= ll || step.abs() <= tol {
                a = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            step = step / T::lit(2.0);
        }
        if !accepted || a.abs().as_f64() > DIVERGENCE_BOUND {
            return Err(diverged("calibration-in-the-large fit", it));
        }
        if step.abs() <= tol {
            return Ok(a);
        }
    }
    Err(diverged(
        "calibration-in-the-large fit",
        MAX_NEWTON_ITERATIONS,
    ))
}

/// `(a, b)` of `logit P(y) = a + b * x_i`.
fn fit_slope<T: Real>(labels: &[u8], x: &[T]) -> Result<(T, T)> {
    let n = T::from_count(x.len());
    let mean = x.iter().fold(T::zero(), |s, &v| s + v) / n;
    let spread = x.iter().fold(T::zero(), |s, &v| s.max((v - mean).abs()));
    if spread <= T::epsilon() * (T::one() + mean.abs()) {
        return Err(AuditError::Degenerate(
            "non-identifiable slope: all predictions are equal".into(),
        ));
    }
    let tol = T::fit_tolerance();
    let (mut a, mut b) = (T::zero(), T::one());
    let mut ll = log_likelihood(labels, |i| a + b * x[i]);
    for it in 0..MAX_NEWTON_ITERATIONS {
        let (mut ga, mut gb) = (T::zero(), T::zero());
        let (mut haa, mut hab, mut hbb) = (T::zero(), T::zero(), T::zero());
        for (i, &y) in labels.iter().enumerate() {
            let p = sigmoid(a + b * x[i]);
            let r = T::from_count(usize::from(y)) - p;
            let w = p * (T::one() - p);
            ga += r;
            gb += r * x[i];
            haa += w;
            hab += w * x[i];
            hbb += w * x[i] * x[i];
        }
        let det = haa * hbb - hab * hab;
        if det <= T::min_positive_value() {
            return Err(diverged("calibration slope fit", it));
        }
        let mut da = (hbb * ga - hab * gb) / det;
        let mut db = (haa * gb - hab * ga) / det;
        let mut accepted = false;
        for _ in 0..50 {
            let (ca, cb) = (a + da, b + db);
            let cand_ll = log_likelihood(labels, |i| ca + cb * x[i]);
            if cand_ll >= ll || da.abs().max(db.abs()) <= tol {
                a = ca;
                b = cb;
                ll = cand_ll;
                accepted = true;
                break;
            }
            da = da / T::lit(2.0);
            db = db / T::lit(2.0);
        }
        if !accepted || a.abs().max(b.abs()).as_f64() > DIVERGENCE_BOUND {
            return Err(diverged("calibration slope fit", it));
        }
        if da.abs().max(db.abs()) <= tol {
            return Ok((a, b));
        }
    }
    Err(diverged("calibration slope fit", MAX_NEWTON_ITERATIONS))
}

fn logits<T: Real>(preds: &PredictionSet<T>) -> Vec<T> {
    let eps = prob_eps::<T>();
    preds.scores().iter().map(|&p| logit(p, eps)).collect()
}

pub fn intercept_slope<T: Real>(preds: &PredictionSet<T>) -> Result<CalibrationFit<T>> {
    preds.require_both_classes("intercept_slope")?;
    let lp = logits(preds);
    let alpha = fit_offset(preds.labels(), &lp)?;
    let (_, beta) = fit_slope(preds.labels(), &lp)?;
    Ok(CalibrationFit { alpha, beta })
}

/// Logistic recalibration in logit space:
/// `p' = sigmoid(intercept + slope * logit(p))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecalibrationMap<T = f64> {
    pub intercept: T,
    pub slope: T,
}

impl<T: Real> RecalibrationMap<T> {
    pub fn identity() -> Self {
        Self {
            intercept: T::zero(),
            slope: T::one(),
        }
    }

    pub fn apply(&self, p: T) -> T {
        sigmoid(self.intercept + self.slope * logit(p, prob_eps::<T>()))
    }

    pub fn apply_all(&self, preds: &PredictionSet<T>) -> Result<PredictionSet<T>> {
        preds.map_scores(|p| self.apply(p))
    }
}

/// Fit a recalibration map on held-out predictions.
pub fn recalibrate<T: Real>(held_out: &PredictionSet<T>) -> Result<RecalibrationMap<T>> {
    held_out.require_both_classes("recalibrate")?;
    let (intercept, slope) = fit_slope(held_out.labels(), &logits(held_out))?;
    Ok(RecalibrationMap { intercept, slope })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport<T = f64> {
    pub binning: Binning,
    pub bins: Vec<CalibrationBin<T>>,
    /// `None` when the fit failed; the reason is in `warnings`.
    pub alpha: Option<T>,
    pub beta: Option<T>,
    pub ece: T,
    pub warnings: Vec<String>,
}

pub fn calibration_report<T: Real>(
    preds: &PredictionSet<T>,
    n_bins: usize,
    binning: Binning,
) -> Result<CalibrationReport<T>> {
    let bins = calibration_curve(preds, n_bins, binning)?;
    let ece = ece(preds, n_bins, binning)?;
    let mut warnings = Vec::new();
    let (events, non_events) = (preds.positives(), preds.negatives());
    if events < MIN_EVENTS_FOR_PRECISION || non_events < MIN_EVENTS_FOR_PRECISION {
        warnings.push(format!(
            "{events} events / {non_events} non-events: fewer than {MIN_EVENTS_FOR_PRECISION} of each, calibration estimates are imprecise"
        ));
    }
    let (alpha, beta) = match intercept_slope(preds) {
        Ok(fit) => (Some(fit.alpha), Some(fit.beta)),
        Err(e) => {
            warnings.push(format!("intercept/slope not estimated: {e}"));
            (None, None)
        }
    };
    Ok(CalibrationReport {
        binning,
        bins,
        alpha,
        beta,
        ece,
        warnings,
    })
}
