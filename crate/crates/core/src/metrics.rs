//! Discrimination metrics, empirical risk, the hold-out error bound and
//! paired significance tests.
//!
//! A prediction is positive when `p >= threshold`. ROC curves group tied
//! scores into a single step, so the trapezoidal AUC gives ties half credit
//! and equals the Mann-Whitney statistic.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::error::{AuditError, Result};
use crate::models::PROB_CLAMP;
use crate::predictions::PredictionSet;
use crate::rng::{self, streams};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn from_decisions(labels: &[u8], decisions: impl IntoIterator<Item = bool>) -> Self {
        let mut c = Self::default();
        for (&y, positive) in labels.iter().zip(decisions) {
            match (y, positive) {
                (1, true) => c.tp += 1,
                (1, false) => c.fn_ += 1,
                (_, true) => c.fp += 1,
                (_, false) => c.tn += 1,
            }
        }
        c
    }
}

pub fn confusion<T: Real>(preds: &PredictionSet<T>, threshold: T) -> ConfusionCounts {
    ConfusionCounts::from_decisions(
        preds.labels(),
        preds.scores().iter().map(|&p| p >= threshold),
    )
}

/// Ratios with a zero denominator are `None`, never silently zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics<T = f64> {
    pub accuracy: Option<T>,
    pub sensitivity: Option<T>,
    pub specificity: Option<T>,
    pub precision: Option<T>,
    pub f1: Option<T>,
}

fn ratio<T: Real>(num: usize, den: usize) -> Option<T> {
    (den > 0).then(|| T::from_count(num) / T::from_count(den))
}

pub fn classification_metrics<T: Real>(c: &ConfusionCounts) -> ClassificationMetrics<T> {
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let precision = ratio(c.tp, c.tp + c.fp);
    let f1 = match (precision, sensitivity) {
        (Some(_), Some(_)) => ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_).or(Some(T::zero())),
        _ => None,
    };
    ClassificationMetrics {
        accuracy: ratio(c.tp + c.tn, c.n()),
        sensitivity,
        specificity: ratio(c.tn, c.tn + c.fp),
        precision,
        f1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve<T = f64> {
    /// Descending; the first entry is `+inf` for the (0, 0) corner.
    pub thresholds: Vec<T>,
    pub fpr: Vec<T>,
    pub tpr: Vec<T>,
    pub auc: T,
}

impl<T: Real> RocCurve<T> {
    /// Largest `tpr - fpr` over the curve (Youden's J).
    pub fn max_youden(&self) -> T {
        self.tpr
            .iter()
            .zip(&self.fpr)
            .map(|(&t, &f)| t - f)
            .fold(T::zero(), T::max)
    }
}

/// Score order, descending; ties keep index order.
fn descending_order<T: Real>(scores: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    idx
}

pub fn roc_auc<T: Real>(preds: &PredictionSet<T>) -> Result<RocCurve<T>> {
    preds.require_both_classes("roc_auc")?;
    let (p, n) = (preds.positives(), preds.negatives());
    let scores = preds.scores();
    let labels = preds.labels();
    let order = descending_order(scores);

    let mut thresholds = vec![T::infinity()];
    let mut fpr = vec![T::zero()];
    let mut tpr = vec![T::zero()];
    let (mut tp, mut fp) = (0usize, 0usize);
    // twice the area in units of one (positive, negative) pair
    let mut doubled_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        doubled_area += ((fp - fp0) * (tp0 + tp)) as u128;
        thresholds.push(s);
        fpr.push(T::from_count(fp) / T::from_count(n));
        tpr.push(T::from_count(tp) / T::from_count(p));
    }
    let auc = T::lit(doubled_area as f64) / (T::lit(2.0) * T::from_count(p) * T::from_count(n));
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc,
    })
}

pub fn auc<T: Real>(preds: &PredictionSet<T>) -> Result<T> {
    roc_auc(preds).map(|r| r.auc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Hard prediction `p >= 0.5` against the label.
    ZeroOne,
    /// Cross-entropy; the probability of the observed class is floored at 1e-12.
    LogLoss,
}

/// Average loss over the sample.
pub fn empirical_risk<T: Real>(labels: &[u8], predictions: &[T], loss: Loss) -> Result<T> {
    if labels.is_empty() || labels.len() != predictions.len() {
        return Err(AuditError::invalid(
            "empirical risk needs aligned, non-empty inputs",
        ));
    }
    let eps = T::lit(PROB_CLAMP);
    let total = labels
        .iter()
        .zip(predictions)
        .fold(T::zero(), |acc, (&y, &p)| {
            acc + match loss {
                Loss::ZeroOne => {
                    if u8::from(p >= T::lit(0.5)) == y {
                        T::zero()
                    } else {
                        T::one()
                    }
                }
                Loss::LogLoss => {
                    let q = if y == 1 { p } else { T::one() - p };
                    -q.max(eps).ln()
                }
            }
        });
    Ok(total / T::from_count(labels.len()))
}

/// `sqrt(ln(2 / delta) / (2 m'))`: with probability `1 - delta` the hold-out
/// estimate of a 0-1 risk lies within this distance of the true risk.
pub fn holdout_error_bound<T: Real>(m_prime: usize, delta: T) -> Result<T> {
    if m_prime == 0 {
        return Err(AuditError::invalid("hold-out size must be >= 1"));
    }
    if !(delta > T::zero() && delta < T::one()) {
        return Err(AuditError::invalid(format!(
            "delta = {delta} outside (0, 1)"
        )));
    }
    Ok(((T::lit(2.0) / delta).ln() / (T::lit(2.0) * T::from_count(m_prime))).sqrt())
}

// ---------------------------------------------------------------------------
// Paired tests
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairedMethod {
    TTest,
    Wilcoxon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub method: PairedMethod,
    /// t statistic, or W+ (sum of ranks of positive differences).
    pub statistic: f64,
    pub p_two_sided: f64,
    /// Differences entering the test (non-zero ones for Wilcoxon).
    pub n: usize,
    /// Whether the Wilcoxon p-value is exact.
    pub exact: bool,
}

/// Largest sample size for which the Wilcoxon p-value is computed exactly.
pub const WILCOXON_EXACT_MAX: usize = 20;

pub fn compare_paired(a: &[f64], b: &[f64], method: PairedMethod) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(AuditError::invalid(
            "paired comparison needs equal lengths >= 2",
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(AuditError::invalid("non-finite paired difference"));
    }
    match method {
        PairedMethod::TTest => paired_t(&diffs),
        PairedMethod::Wilcoxon => Ok(wilcoxon_signed_rank(&diffs, WILCOXON_EXACT_MAX)),
    }
}

fn paired_t(diffs: &[f64]) -> Result<PairedTest> {
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(AuditError::Degenerate(
            "paired differences have zero variance".into(),
        ));
    }
    let t = mean / (var / n).sqrt();
    Ok(PairedTest {
        method: PairedMethod::TTest,
        statistic: t,
        p_two_sided: student_t_two_sided(t, n - 1.0),
        n: diffs.len(),
        exact: false,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom, via the
/// regularized incomplete beta `I_{df/(df+t^2)}(df/2, 1/2)`.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Wilcoxon signed-rank test; zero differences are dropped before ranking.
fn wilcoxon_signed_rank(diffs: &[f64], exact_max: usize) -> PairedTest {
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return PairedTest {
            method: PairedMethod::Wilcoxon,
            statistic: 0.0,
            p_two_sided: 1.0,
            n: 0,
            exact: true,
        };
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = nz
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    if n <= exact_max {
        // Doubled ranks are integers even with ties; count sign patterns per sum.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut ways = vec![0u64; total + 1];
        ways[0] = 1;
        for &r in &doubled {
            for s in (r..=total).rev() {
                ways[s] += ways[s - r];
            }
        }
        let observed = (2.0 * w_plus).round() as usize;
        let patterns = (1u64 << n) as f64;
        let lower: u64 = ways[..=observed].iter().sum();
        let upper: u64 = ways[observed..].iter().sum();
        let p = (2.0 * lower.min(upper) as f64 / patterns).min(1.0);
        return PairedTest {
            method: PairedMethod::Wilcoxon,
            statistic: w_plus,
            p_two_sided: p,
            n,
            exact: true,
        };
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    PairedTest {
        method: PairedMethod::Wilcoxon,
        statistic: w_plus,
        p_two_sided: erfc(z / std::f64::consts::SQRT_2).min(1.0),
        n,
        exact: false,
    }
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

/// Redraws allowed per replicate when a resample contains one class only.
pub const BOOTSTRAP_RETRY_CAP: usize = 1000;

/// Percentile bootstrap interval for `metric` at the given two-sided level.
pub fn bootstrap_ci<T, F>(
    preds: &PredictionSet<T>,
    metric: F,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<(T, T)>
where
    T: Real,
    F: Fn(&PredictionSet<T>) -> Result<T>,
{
    let n = preds.len();
    if n < 10 {
        return Err(AuditError::invalid(
            "bootstrap needs at least 10 predictions",
        ));
    }
    if n_boot == 0 || !(level > 0.0 && level < 1.0) {
        return Err(AuditError::invalid(
            "bootstrap needs n_boot >= 1 and level in (0, 1)",
        ));
    }
    preds.require_both_classes("bootstrap")?;
    let mut rng = rng::stream(seed, streams::BOOTSTRAP);
    let mut stats = Vec::with_capacity(n_boot);
    let mut idx = vec![0usize; n];
    for _ in 0..n_boot {
        let mut tries = 0;
        let sample = loop {
            for slot in idx.iter_mut() {
                *slot = rng.random_range(0..n);
            }
            let s = preds.subset(&idx);
            if s.has_both_classes() {
                break s;
            }
            tries += 1;
            if tries >= BOOTSTRAP_RETRY_CAP {
                return Err(AuditError::Degenerate(
                    "bootstrap resamples keep collapsing to a single class".into(),
                ));
            }
        };
        stats.push(metric(&sample)?);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    let alpha = (1.0 - level) / 2.0;
    Ok((
        quantile_sorted(&stats, alpha),
        quantile_sorted(&stats, 1.0 - alpha),
    ))
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted<T: Real>(sorted: &[T], q: f64) -> T {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = T::lit(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn confusion_examples() {
        let p = PredictionSet::new(vec![1, 0, 0, 1], vec![0.9, 0.2, 0.7, 0.1]).unwrap();
        assert_eq!(
            confusion(&p, 0.5),
            ConfusionCounts {
                tp: 1,
                fp: 1,
                tn: 1,
                fn_: 1
            }
        );
        let all = confusion(&p, 0.0);
        assert_eq!(all.tp + all.fp, 4);
        let none = confusion(&p, 1.01);
        assert_eq!(none.tn + none.fn_, 4);
    }

    #[test]
    fn metrics_hand_arithmetic() {
        let c = ConfusionCounts {
            tp: 40,
            fn_: 10,
            fp: 5,
            tn: 45,
        };
        let m: ClassificationMetrics = classification_metrics(&c);
        assert!((m.sensitivity.unwrap() - 0.8).abs() < 1e-15);
        assert!((m.specificity.unwrap() - 0.9).abs() < 1e-15);
        assert!((m.precision.unwrap() - 8.0 / 9.0).abs() < 1e-15);
        assert!((m.f1.unwrap() - 16.0 / 19.0).abs() < 1e-15);
        let perfect: ClassificationMetrics = classification_metrics(&ConfusionCounts {
            tp: 3,
            fp: 0,
            tn: 4,
            fn_: 0,
        });
        for v in [
            perfect.accuracy,
            perfect.sensitivity,
            perfect.specificity,
            perfect.precision,
            perfect.f1,
        ] {
            assert_eq!(v, Some(1.0));
        }
        let none: ClassificationMetrics = classification_metrics(&ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 4,
            fn_: 2,
        });
        assert_eq!(none.precision, None);
        assert_eq!(none.f1, None);
        assert_eq!(none.sensitivity, Some(0.0));
    }

    #[test]
    fn auc_examples() {
        let p = PredictionSet::new(vec![0, 0, 1, 1], vec![0.1, 0.4, 0.35, 0.8]).unwrap();
        assert_eq!(auc(&p).unwrap(), 0.75);
        let perfect = PredictionSet::new(vec![0, 1, 0, 1], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(auc(&perfect).unwrap(), 1.0);
        let ties = PredictionSet::new(vec![0, 1, 0, 1, 1], vec![0.3; 5]).unwrap();
        assert_eq!(auc(&ties).unwrap(), 0.5);
        let single = PredictionSet::new(vec![1, 1], vec![0.3, 0.4]).unwrap();
        assert!(matches!(roc_auc(&single), Err(AuditError::SingleClass(_))));
        let f32set = PredictionSet::new(vec![0, 0, 1, 1], vec![0.1f32, 0.4, 0.35, 0.8]).unwrap();
        assert_eq!(auc(&f32set).unwrap(), 0.75f32);
    }

    #[test]
    fn empirical_risk_examples() {
        assert_eq!(
            empirical_risk(&[1, 0, 1], &[1.0, 0.0, 1.0], Loss::ZeroOne).unwrap(),
            0.0
        );
        let r: f64 = empirical_risk(&[1, 0, 1], &[1.0, 1.0, 1.0], Loss::ZeroOne).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
        let ll: f64 = empirical_risk(&[1, 0], &[0.0, 1.0], Loss::LogLoss).unwrap();
        assert!((ll - 27.631021115928547).abs() < 1e-6, "{ll}");
    }

    #[test]
    fn error_bound_values() {
        let e: f64 = holdout_error_bound(200, 0.05).unwrap();
        assert!((e - 0.0960322791319921).abs() < 1e-12);
        let quad: f64 = holdout_error_bound(800, 0.05).unwrap();
        assert!((quad - e / 2.0).abs() < 1e-15);
        let delta = 2.0 / std::f64::consts::E.powi(2);
        assert!((holdout_error_bound(25, delta).unwrap() - 0.2).abs() < 1e-12);
        assert!(holdout_error_bound(10, 1.0).is_err());
        assert!(holdout_error_bound(10, 0.0).is_err());
        assert!(holdout_error_bound(0, 0.5).is_err());
    }

    #[test]
    fn wilcoxon_small_exact() {
        let t = compare_paired(&[1.0, 2.0, 3.0], &[0.0; 3], PairedMethod::Wilcoxon).unwrap();
        assert_eq!(t.statistic, 6.0);
        assert!((t.p_two_sided - 0.25).abs() < 1e-15);
        let same = compare_paired(&[0.7, 0.8], &[0.7, 0.8], PairedMethod::Wilcoxon).unwrap();
        assert_eq!(same.p_two_sided, 1.0);
    }

    #[test]
    fn t_test_hand_values() {
        // statistic by hand; p-value frozen from scipy.stats.ttest_1samp
        let t = compare_paired(&[2.0, 0.0, 1.0, 3.0], &[0.0; 4], PairedMethod::TTest).unwrap();
        assert!((t.statistic - 2.32379000772445).abs() < 1e-10);
        assert!((t.p_two_sided - 0.10272807885839903).abs() < 1e-10);
        let flat = compare_paired(&[1.0, 1.0, 1.0], &[0.0; 3], PairedMethod::TTest);
        assert!(matches!(flat, Err(AuditError::Degenerate(_))));
        assert!(compare_paired(&[1.0], &[0.0], PairedMethod::TTest).is_err());
    }

    #[test]
    fn wilcoxon_normal_approximation_is_close_to_exact_at_boundary() {
        let diffs: Vec<f64> = (1..=20)
            .map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 })
            .collect();
        let approx = wilcoxon_signed_rank(&diffs, 0);
        let exact = wilcoxon_signed_rank(&diffs, WILCOXON_EXACT_MAX);
        assert!(!approx.exact && exact.exact);
        assert_eq!(approx.statistic, exact.statistic);
        assert!(
            (approx.p_two_sided - exact.p_two_sided).abs() < 0.01,
            "{approx:?} {exact:?}"
        );
    }

    #[test]
    fn bootstrap_constant_metric_and_determinism() {
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 2 == 0)).collect();
        let scores: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
        let p = PredictionSet::new(labels, scores).unwrap();
        assert_eq!(bootstrap_ci(&p, auc, 100, 0.95, 3).unwrap(), (1.0, 1.0));
        let noisy = p.map_scores(|s| s * 0.3 + 0.35).unwrap();
        let noisy = PredictionSet::new(
            noisy.labels().to_vec(),
            noisy
                .scores()
                .iter()
                .enumerate()
                .map(|(i, s)| s + (i % 7) as f64 * 0.05)
                .collect(),
        )
        .unwrap();
        let a = bootstrap_ci(&noisy, auc, 200, 0.9, 11).unwrap();
        assert_eq!(a, bootstrap_ci(&noisy, auc, 200, 0.9, 11).unwrap());
        let point = auc(&noisy).unwrap();
        assert!(a.0 <= point && point <= a.1);
    }

    #[test]
    fn bootstrap_coverage_is_near_nominal() {
        use rand_distr::{Distribution, Normal};
        // positives ~ N(mu, 1), negatives ~ N(0, 1): true AUC = Phi(mu / sqrt 2)
        let mu: f64 = 1.0;
        let truth = 0.5 * erfc(-mu / 2.0);
        let mut rng = rng::stream(2024, 99);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let sims = 200;
        let mut covered = 0;
        for s in 0..sims {
            let labels: Vec<u8> = (0..500).map(|i| u8::from(i < 250)).collect();
            let scores: Vec<f64> = labels
                .iter()
                .map(|&y| normal.sample(&mut rng) + if y == 1 { mu } else { 0.0 })
                .collect();
            let p = PredictionSet::new(labels, scores).unwrap();
            let (lo, hi) = bootstrap_ci(&p, auc, 200, 0.9, s).unwrap();
            if lo <= truth && truth <= hi {
                covered += 1;
            }
        }
        let rate = covered as f64 / sims as f64;
        assert!((rate - 0.9).abs() <= 0.05, "coverage {rate}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
            (2usize..120).prop_flat_map(|n| {
                (
                    proptest::collection::vec(0u8..2, n),
                    // coarse grid forces plenty of ties
                    proptest::collection::vec((0u32..20).prop_map(|k| k as f64 / 19.0), n),
                )
            })
        }

        proptest! {
            #[test]
            fn auc_matches_pairwise_and_negation((labels, scores) in instance()) {
                prop_assume!(labels.contains(&0) && labels.contains(&1));
                let p = PredictionSet::new(labels.clone(), scores.clone()).unwrap();
                let roc = roc_auc(&p).unwrap();
                prop_assert!((roc.auc - pairwise_auc(&scores, &labels)).abs() < 1e-12);
                let neg = p.map_scores(|s| -s).unwrap();
                prop_assert!((auc(&neg).unwrap() - (1.0 - roc.auc)).abs() < 1e-12);
                prop_assert_eq!((roc.fpr[0], roc.tpr[0]), (0.0, 0.0));
                prop_assert_eq!((*roc.fpr.last().unwrap(), *roc.tpr.last().unwrap()), (1.0, 1.0));
                prop_assert!(roc.fpr.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!(roc.tpr.windows(2).all(|w| w[0] <= w[1]));
            }

            #[test]
            fn error_bound_strictly_decreasing(m in 1usize..5000, delta in 0.001f64..0.9) {
                let e: f64 = holdout_error_bound(m, delta).unwrap();
                prop_assert!(e > 0.0);
                prop_assert!(holdout_error_bound(m + 1, delta).unwrap() < e);
                prop_assert!(holdout_error_bound(m, delta * 1.05).unwrap() < e);
            }

            #[test]
            fn f1_between_precision_and_recall(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
                let m: ClassificationMetrics = classification_metrics(&ConfusionCounts { tp, fp, tn, fn_ });
                if let (Some(p), Some(r), Some(f)) = (m.precision, m.sensitivity, m.f1) {
                    prop_assert!(f >= p.min(r) - 1e-15 && f <= p.max(r) + 1e-15);
                }
            }
        }
    }
}
