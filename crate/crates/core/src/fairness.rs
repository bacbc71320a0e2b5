//! Group-conditional metrics and fairness gaps.
//!
//! Every gap is the largest absolute difference over pairs of groups, which
//! equals `max - min` over the per-group values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calibration::{self, assign_bins, Binning, CalibrationReport};
use crate::error::{AuditError, Result};
use crate::metrics::{classification_metrics, ClassificationMetrics, ConfusionCounts};
use crate::predictions::PredictionSet;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow<T = f64> {
    pub group: u32,
    pub n: usize,
    pub positives: usize,
    pub counts: ConfusionCounts,
    pub positive_rate: T,
    pub mean_score: T,
    pub metrics: ClassificationMetrics<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessCriteria<T = f64> {
    pub independence_gap: T,
    /// Largest of the defined TPR and FPR gaps.
    pub separation_gap: T,
    pub tpr_gap: Option<T>,
    pub fpr_gap: Option<T>,
    pub sufficiency_gap: T,
    /// Components that could not be computed, with the reason.
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCalibration<T = f64> {
    pub group: u32,
    pub alpha: T,
    pub beta: T,
    pub ece: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport<T = f64> {
    pub threshold: T,
    pub groups: Vec<GroupRow<T>>,
    pub spd: T,
    pub criteria: FairnessCriteria<T>,
    pub calibration: Vec<(u32, CalibrationReport<T>)>,
}

/// Row indices per group id, in ascending group order.
fn partition<T: Real>(preds: &PredictionSet<T>) -> Result<BTreeMap<u32, Vec<usize>>> {
    let groups = preds
        .groups()
        .ok_or_else(|| AuditError::Schema("fairness metrics need a group column".into()))?;
    let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &g) in groups.iter().enumerate() {
        map.entry(g).or_default().push(i);
    }
    if map.len() < 2 {
        return Err(AuditError::invalid(format!(
            "fairness metrics need at least 2 groups, found {}",
            map.len()
        )));
    }
    Ok(map)
}

fn spread<T: Real>(values: impl IntoIterator<Item = T>) -> Option<T> {
    let mut it = values.into_iter();
    let first = it.next()?;
    let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Some(hi - lo)
}

fn mean<T: Real>(values: impl IntoIterator<Item = T>) -> T {
    let (sum, n) = values
        .into_iter()
        .fold((T::zero(), 0usize), |(s, n), v| (s + v, n + 1));
    sum / T::from_count(n)
}

pub fn group_table<T: Real>(preds: &PredictionSet<T>, threshold: T) -> Result<Vec<GroupRow<T>>> {
    let (labels, scores) = (preds.labels(), preds.scores());
    Ok(partition(preds)?
        .into_iter()
        .map(|(group, idx)| {
            let counts = ConfusionCounts::from_decisions(
                &idx.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
                idx.iter().map(|&i| scores[i] >= threshold),
            );
            GroupRow {
                group,
                n: idx.len(),
                positives: counts.tp + counts.fn_,
                positive_rate: T::from_count(counts.tp + counts.fp) / T::from_count(idx.len()),
                mean_score: mean(idx.iter().map(|&i| scores[i])),
                metrics: classification_metrics(&counts),
                counts,
            }
        })
        .collect())
}

/// Largest gap in positive-classification rate between groups.
pub fn statistical_parity_difference<T: Real>(preds: &PredictionSet<T>, threshold: T) -> Result<T> {
    let rows = group_table(preds, threshold)?;
    Ok(spread(rows.iter().map(|r| r.positive_rate)).unwrap_or_else(T::zero))
}

pub fn fairness_criteria<T: Real>(
    preds: &PredictionSet<T>,
    threshold: T,
    n_bins: usize,
    binning: Binning,
) -> Result<FairnessCriteria<T>> {
    let rows = group_table(preds, threshold)?;
    let mut undefined = Vec::new();
    let independence_gap = spread(rows.iter().map(|r| r.mean_score)).unwrap_or_else(T::zero);

    let mut rate_gap =
        |name: &str, class: &str, pick: fn(&ClassificationMetrics<T>) -> Option<T>| {
            let missing: Vec<String> = rows
                .iter()
                .filter(|r| pick(&r.metrics).is_none())
                .map(|r| r.group.to_string())
                .collect();
            if missing.is_empty() {
                spread(rows.iter().filter_map(|r| pick(&r.metrics)))
            } else {
                undefined.push(format!(
                    "{name} undefined: group(s) {} have no {class}",
                    missing.join(", ")
                ));
                None
            }
        };
    let tpr_gap = rate_gap("tpr gap", "positives", |m| m.sensitivity);
    let fpr_gap = rate_gap("fpr gap", "negatives", |m| {
        m.specificity.map(|s| T::one() - s)
    });
    let separation_gap = [tpr_gap, fpr_gap]
        .into_iter()
        .flatten()
        .fold(T::zero(), T::max);

    let sufficiency_gap = sufficiency_gap(preds, n_bins, binning)?;
    Ok(FairnessCriteria {
        independence_gap,
        separation_gap,
        tpr_gap,
        fpr_gap,
        sufficiency_gap,
        undefined,
    })
}

/// Largest gap in observed event rate between groups sharing a score bin,
/// over bins occupied by at least two groups. Bins come from the calibration
/// module's edges over all predictions.
fn sufficiency_gap<T: Real>(
    preds: &PredictionSet<T>,
    n_bins: usize,
    binning: Binning,
) -> Result<T> {
    let bins = assign_bins(preds.scores(), n_bins, binning)?;
    let groups = preds.groups().expect("checked by partition");
    // (bin, group) -> (events, count)
    let mut cells: BTreeMap<(usize, u32), (usize, usize)> = BTreeMap::new();
    for ((&b, &g), &y) in bins.iter().zip(groups).zip(preds.labels()) {
        let c = cells.entry((b, g)).or_default();
        c.0 += usize::from(y);
        c.1 += 1;
    }
    let mut gap = T::zero();
    for b in 0..n_bins {
        let rates = cells
            .range((b, 0)..=(b, u32::MAX))
            .map(|(_, &(e, c))| T::from_count(e) / T::from_count(c));
        if let Some(s) = spread(rates) {
            gap = gap.max(s);
        }
    }
    Ok(gap)
}

/// Calibration intercept, slope and ECE per group. Failures carry the group id.
pub fn subgroup_calibration<T: Real>(
    preds: &PredictionSet<T>,
    n_bins: usize,
    binning: Binning,
) -> Result<Vec<GroupCalibration<T>>> {
    partition(preds)?
        .into_iter()
        .map(|(group, idx)| {
            let tag = |source| AuditError::Group {
                group,
                source: Box::new(source),
            };
            let sub = preds.subset(&idx);
            let fit = calibration::intercept_slope(&sub).map_err(tag)?;
            let ece = calibration::ece(&sub, n_bins, binning).map_err(tag)?;
            Ok(GroupCalibration {
                group,
                alpha: fit.alpha,
                beta: fit.beta,
                ece,
            })
        })
        .collect()
}

/// Everything above in one report; per-group calibration problems become
/// warnings inside each group's calibration entry.
pub fn fairness_report<T: Real>(
    preds: &PredictionSet<T>,
    threshold: T,
    n_bins: usize,
    binning: Binning,
) -> Result<FairnessReport<T>> {
    let groups = group_table(preds, threshold)?;
    let spd = spread(groups.iter().map(|r| r.positive_rate)).unwrap_or_else(T::zero);
    let criteria = fairness_criteria(preds, threshold, n_bins, binning)?;
    let calibration = partition(preds)?
        .into_iter()
        .map(|(group, idx)| {
            calibration::calibration_report(&preds.subset(&idx), n_bins, binning)
                .map(|r| (group, r))
                .map_err(|source| AuditError::Group {
                    group,
                    source: Box::new(source),
                })
        })
        .collect::<Result<_>>()?;
    Ok(FairnessReport {
        threshold,
        groups,
        spd,
        criteria,
        calibration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_with_truth, SyntheticSpec};
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn grouped(labels: Vec<u8>, scores: Vec<f64>, groups: Vec<u32>) -> PredictionSet<f64> {
        PredictionSet::with_groups(labels, scores, groups).unwrap()
    }

    /// Group `g` classifies `rates[g] * 10` of its ten rows as positive.
    fn rate_fixture(rates: &[usize]) -> PredictionSet<f64> {
        let (mut l, mut s, mut g) = (vec![], vec![], vec![]);
        for (gi, &r) in rates.iter().enumerate() {
            for i in 0..10 {
                l.push((i % 2) as u8);
                s.push(if i < r { 0.9 } else { 0.1 });
                g.push(gi as u32);
            }
        }
        grouped(l, s, g)
    }

    #[test]
    fn spd_examples() {
        let p = rate_fixture(&[5, 3]);
        assert!((statistical_parity_difference(&p, 0.5).unwrap() - 0.2).abs() < 1e-12);
        let p = rate_fixture(&[2, 5, 9]);
        assert!((statistical_parity_difference(&p, 0.5).unwrap() - 0.7).abs() < 1e-12);
        let p = rate_fixture(&[4, 4]);
        assert_eq!(statistical_parity_difference(&p, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn needs_two_groups() {
        let p = grouped(vec![0, 1], vec![0.2, 0.7], vec![3, 3]);
        assert!(statistical_parity_difference(&p, 0.5).is_err());
        let p = PredictionSet::new(vec![0, 1], vec![0.2, 0.7]).unwrap();
        assert!(statistical_parity_difference(&p, 0.5).is_err());
    }

    #[test]
    fn copies_have_zero_gaps() {
        let s =
            gen_synthetic_with_truth(&SyntheticSpec::new(400, vec![1.0, -1.0], 0.0, 4)).unwrap();
        let labels = s.dataset.labels().to_vec();
        let scores = s.true_probability.clone();
        let p = grouped(
            [labels.clone(), labels].concat(),
            [scores.clone(), scores].concat(),
            [vec![0; 400], vec![1; 400]].concat(),
        );
        let c = fairness_criteria(&p, 0.5, 10, Binning::EqualWidth).unwrap();
        assert_eq!(c.independence_gap, 0.0);
        assert_eq!(c.separation_gap, 0.0);
        assert_eq!(c.sufficiency_gap, 0.0);
        let cal = subgroup_calibration(&p, 10, Binning::EqualWidth).unwrap();
        assert_eq!(cal[0].alpha, cal[1].alpha);
        assert_eq!(cal[0].beta, cal[1].beta);
        assert_eq!(cal[0].ece, cal[1].ece);
    }

    #[test]
    fn independent_scores_small_independence_gap() {
        let mut r = rng::stream(8, 0);
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let labels: Vec<u8> = scores
            .iter()
            .map(|&p| u8::from(r.random::<f64>() < p))
            .collect();
        let groups: Vec<u32> = (0..n).map(|_| r.random_range(0..2)).collect();
        let c = fairness_criteria(
            &grouped(labels, scores, groups),
            0.5,
            10,
            Binning::EqualWidth,
        )
        .unwrap();
        assert!(c.independence_gap < 0.03, "{c:?}");
    }

    #[test]
    fn differing_prevalence_forces_separation_gap() {
        // both groups share the score distribution, prevalence 0.5 vs 0.2
        let (mut l, mut s, mut g) = (vec![], vec![], vec![]);
        for (grp, pos) in [(0u32, 50), (1, 20)] {
            for i in 0..100 {
                g.push(grp);
                s.push(if i < 50 { 0.8 } else { 0.2 });
                l.push(u8::from(i < pos || (grp == 0 && i < 50)));
            }
        }
        let c = fairness_criteria(&grouped(l, s, g), 0.5, 10, Binning::EqualWidth).unwrap();
        assert_eq!(c.independence_gap, 0.0);
        assert!((c.separation_gap - 0.375).abs() < 1e-12, "{c:?}");
    }

    #[test]
    fn missing_class_is_reported() {
        let p = grouped(vec![1, 0, 0, 0], vec![0.9, 0.1, 0.6, 0.2], vec![0, 0, 1, 1]);
        let c = fairness_criteria(&p, 0.5, 10, Binning::EqualWidth).unwrap();
        assert_eq!(c.tpr_gap, None);
        assert_eq!(c.fpr_gap, Some(0.5));
        assert_eq!(c.separation_gap, 0.5);
        assert_eq!(c.undefined.len(), 1);
        assert!(c.undefined[0].contains("group(s) 1"));
    }

    #[test]
    fn logit_shift_moves_group_alpha() {
        let s = gen_synthetic_with_truth(&SyntheticSpec::new(20_000, vec![1.0, 0.5], -0.2, 12))
            .unwrap();
        let labels = s.dataset.labels().to_vec();
        let groups: Vec<u32> = (0..labels.len()).map(|i| (i % 2) as u32).collect();
        let scores: Vec<f64> = s
            .true_probability
            .iter()
            .zip(&groups)
            .map(|(&p, &g)| {
                if g == 1 {
                    crate::scalar::sigmoid((p / (1.0 - p)).ln() + 1.0)
                } else {
                    p
                }
            })
            .collect();
        let cal = subgroup_calibration(&grouped(labels, scores, groups), 10, Binning::EqualWidth)
            .unwrap();
        let shift = cal[1].alpha - cal[0].alpha;
        assert!((shift + 1.0).abs() < 0.15, "{cal:?}");
    }

    #[test]
    fn calibration_errors_are_tagged() {
        let p = grouped(
            vec![1, 0, 1, 0, 1, 1],
            vec![0.9, 0.1, 0.3, 0.6, 0.6, 0.7],
            vec![0, 0, 0, 0, 5, 5],
        );
        match subgroup_calibration(&p, 10, Binning::EqualWidth) {
            Err(AuditError::Group { group: 5, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn relabel_and_permute_invariance(
            rows in prop::collection::vec((0u8..2, 0u32..=20, 0u32..3), 12..80),
            seed in any::<u64>(),
        ) {
            let mut rows = rows;
            // ensure three groups with both classes present
            for g in 0..3u32 {
                rows.push((0, 5, g));
                rows.push((1, 15, g));
            }
            let build = |rows: &[(u8, u32, u32)], relabel: fn(u32) -> u32| {
                grouped(
                    rows.iter().map(|r| r.0).collect(),
                    rows.iter().map(|r| f64::from(r.1) / 20.0).collect(),
                    rows.iter().map(|r| relabel(r.2)).collect(),
                )
            };
            let base = build(&rows, |g| g);
            let c0 = fairness_criteria(&base, 0.5, 10, Binning::EqualWidth).unwrap();
            let c1 = fairness_criteria(&build(&rows, |g| 100 - 7 * g), 0.5, 10, Binning::EqualWidth).unwrap();
            prop_assert_eq!(&c0, &c1);
            let mut shuffled = rows.clone();
            rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut rng::stream(seed, 0));
            let c2 = fairness_criteria(&build(&shuffled, |g| g), 0.5, 10, Binning::EqualWidth).unwrap();
            prop_assert!((c0.independence_gap - c2.independence_gap).abs() < 1e-12);
            prop_assert_eq!(c0.separation_gap, c2.separation_gap);
            prop_assert_eq!(c0.sufficiency_gap, c2.sufficiency_gap);

            // spd equals the independence gap of thresholded scores
            let spd = statistical_parity_difference(&base, 0.5).unwrap();
            let hard = base.map_scores(|s| if s >= 0.5 { 1.0 } else { 0.0 }).unwrap();
            let ind = fairness_criteria(&hard, 0.5, 10, Binning::EqualWidth).unwrap().independence_gap;
            prop_assert!((spd - ind).abs() < 1e-12);
        }
    }
}
