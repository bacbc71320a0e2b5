use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{AuditError, Result};
use crate::models::Predictor;
use crate::scalar::Real;

/// Aligned `(label, class-1 probability, group)` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet<T = f64> {
    labels: Vec<u8>,
    scores: Vec<T>,
    groups: Option<Vec<u32>>,
}

impl<T: Real> PredictionSet<T> {
    pub fn new(labels: Vec<u8>, scores: Vec<T>) -> Result<Self> {
        Self::build(labels, scores, None)
    }

    pub fn with_groups(labels: Vec<u8>, scores: Vec<T>, groups: Vec<u32>) -> Result<Self> {
        Self::build(labels, scores, Some(groups))
    }

    fn build(labels: Vec<u8>, scores: Vec<T>, groups: Option<Vec<u32>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(AuditError::invalid("empty prediction set"));
        }
        if scores.len() != labels.len() {
            return Err(AuditError::Schema(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(row) = labels.iter().position(|&y| y > 1) {
            return Err(AuditError::NonBinaryLabel {
                row,
                value: labels[row].to_string(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(AuditError::invalid("non-finite score"));
        }
        if groups.as_ref().is_some_and(|g| g.len() != labels.len()) {
            return Err(AuditError::Schema(
                "group column length differs from labels".into(),
            ));
        }
        Ok(Self {
            labels,
            scores,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn groups(&self) -> Option<&[u32]> {
        self.groups.as_deref()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    pub fn prevalence(&self) -> T {
        T::from_count(self.positives()) / T::from_count(self.len())
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.positives();
        p > 0 && p < self.len()
    }

    pub fn require_both_classes(&self, context: &str) -> Result<()> {
        if self.has_both_classes() {
            Ok(())
        } else {
            Err(AuditError::SingleClass(format!(
                "{context} needs both classes"
            )))
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            scores: indices.iter().map(|&i| self.scores[i]).collect(),
            groups: self
                .groups
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i]).collect()),
        }
    }

    pub fn map_scores(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::build(
            self.labels.clone(),
            self.scores.iter().map(|&s| f(s)).collect(),
            self.groups.clone(),
        )
    }
}

impl PredictionSet<f64> {
    /// Score every row of `ds` with `model`, carrying labels and groups over.
    pub fn from_model(model: &dyn Predictor, ds: &Dataset) -> Result<Self> {
        if model.n_features() != ds.d() {
            return Err(AuditError::Schema(format!(
                "model expects {} features, dataset has {}",
                model.n_features(),
                ds.d()
            )));
        }
        Self::build(
            ds.labels().to_vec(),
            model.predict_rows(ds),
            ds.group().map(<[u32]>::to_vec),
        )
    }
}

/// Prediction CSV: `label`, `score`, optional `group`, and any number of
/// extra 0/1 columns kept as named binary tests (decision-curve comparators).
#[derive(Debug, Clone)]
pub struct PredictionTable {
    pub predictions: PredictionSet<f64>,
    pub binary_tests: Vec<(String, Vec<bool>)>,
}

pub fn read_prediction_csv<R: Read>(reader: R) -> Result<PredictionTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let label_i = find("label").ok_or_else(|| AuditError::Schema("missing label column".into()))?;
    let score_i = find("score").ok_or_else(|| AuditError::Schema("missing score column".into()))?;
    let group_i = find("group");
    let extra: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_i && c != score_i && Some(c) != group_i)
        .collect();
    let mut labels = Vec::new();
    let mut scores = Vec::new();
    let mut groups = Vec::new();
    let mut tests: Vec<Vec<bool>> = vec![Vec::new(); extra.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |c: usize| rec.get(c).unwrap_or("").trim().to_string();
        let bad = |c: usize, v: String| AuditError::NonNumeric {
            row,
            column: headers[c].clone(),
            value: v,
        };
        labels.push(match cell(label_i).as_str() {
            "0" | "0.0" => 0,
            "1" | "1.0" => 1,
            other => {
                return Err(AuditError::NonBinaryLabel {
                    row,
                    value: other.into(),
                })
            }
        });
        let s = cell(score_i);
        scores.push(s.parse::<f64>().map_err(|_| bad(score_i, s.clone()))?);
        if let Some(gi) = group_i {
            let g = cell(gi);
            groups.push(g.parse::<u32>().map_err(|_| bad(gi, g.clone()))?);
        }
        for (t, &c) in extra.iter().enumerate() {
            let v = cell(c);
            tests[t].push(match v.as_str() {
                "0" | "0.0" => false,
                "1" | "1.0" => true,
                _ => return Err(bad(c, v)),
            });
        }
    }
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(AuditError::Schema(
            "scores must be probabilities in [0, 1]".into(),
        ));
    }
    let predictions = match group_i {
        Some(_) => PredictionSet::with_groups(labels, scores, groups)?,
        None => PredictionSet::new(labels, scores)?,
    };
    Ok(PredictionTable {
        predictions,
        binary_tests: extra
            .iter()
            .map(|&c| headers[c].clone())
            .zip(tests)
            .collect(),
    })
}
