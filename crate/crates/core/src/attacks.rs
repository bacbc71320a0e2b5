//! Attack harness: shadow-model membership inference and gradient-sign
//! evasion attacks.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{AuditError, Result};
use crate::metrics;
use crate::models::{self, Architecture, Model, Predictor, TrainConfig};
use crate::predictions::PredictionSet;
use crate::rng::{self, streams};

// ---------------------------------------------------------------------------
// Membership inference
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackFeatures {
    Confidence,
    Loss,
    #[default]
    ConfidenceAndLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaSetup {
    pub shadow_count: usize,
    pub shadow_arch: Architecture,
    pub shadow_train: TrainConfig,
    pub features: AttackFeatures,
    pub seed: u64,
}

impl Default for MiaSetup {
    fn default() -> Self {
        Self {
            shadow_count: 4,
            shadow_arch: Architecture::Logistic,
            shadow_train: TrainConfig::default(),
            features: AttackFeatures::default(),
            seed: 0,
        }
    }
}

/// Row roles inside one pool. `members` must come from `target_train`;
/// everything else is pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaSplit {
    pub target_train: Vec<usize>,
    pub members: Vec<usize>,
    pub non_members: Vec<usize>,
    pub shadow_pool: Vec<usize>,
}

impl MiaSplit {
    /// Seeded split: `target_size` training rows (of which `eval_size` are
    /// probed as members), `eval_size` non-members, the rest for shadows.
    pub fn plan(n: usize, target_size: usize, eval_size: usize, seed: u64) -> Result<Self> {
        if eval_size == 0 || eval_size > target_size || target_size + eval_size >= n {
            return Err(AuditError::invalid(format!(
                "cannot carve target {target_size} + non-members {eval_size} + a shadow pool out of {n} rows"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(seed, streams::MIA));
        let mut target_train = idx[..target_size].to_vec();
        let mut members = target_train[..eval_size].to_vec();
        let mut non_members = idx[target_size..target_size + eval_size].to_vec();
        let mut shadow_pool = idx[target_size + eval_size..].to_vec();
        for v in [
            &mut target_train,
            &mut members,
            &mut non_members,
            &mut shadow_pool,
        ] {
            v.sort_unstable();
        }
        Ok(Self {
            target_train,
            members,
            non_members,
            shadow_pool,
        })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<usize>>();
        let (train, mem, non, shadow) = (
            set(&self.target_train),
            set(&self.members),
            set(&self.non_members),
            set(&self.shadow_pool),
        );
        let sizes = [
            (&train, self.target_train.len()),
            (&mem, self.members.len()),
            (&non, self.non_members.len()),
            (&shadow, self.shadow_pool.len()),
        ];
        if sizes.iter().any(|(s, len)| s.len() != *len) {
            return Err(AuditError::invalid("duplicate row in membership split"));
        }
        if [&train, &mem, &non, &shadow]
            .iter()
            .any(|s| s.iter().any(|&i| i >= n))
        {
            return Err(AuditError::invalid("membership split index out of range"));
        }
        if !mem.is_subset(&train) {
            return Err(AuditError::invalid("members must be target training rows"));
        }
        if !non.is_disjoint(&train) || !shadow.is_disjoint(&train) || !shadow.is_disjoint(&non) {
            return Err(AuditError::invalid(
                "target, non-member and shadow rows must be disjoint",
            ));
        }
        if mem.len() != non.len() || mem.is_empty() {
            return Err(AuditError::invalid(
                "member and non-member sets must be non-empty and equal in size",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipResult {
    pub member_scores: Vec<f64>,
    pub non_member_scores: Vec<f64>,
    pub auc: f64,
    /// Largest `tpr - fpr` over thresholds.
    pub advantage: f64,
}

/// AUC and advantage of membership scores (members are the positive class).
pub fn score_membership(
    member_scores: &[f64],
    non_member_scores: &[f64],
) -> Result<MembershipResult> {
    if member_scores.len() != non_member_scores.len() || member_scores.is_empty() {
        return Err(AuditError::invalid(
            "member and non-member sets must be non-empty and equal in size",
        ));
    }
    let labels = [
        vec![1u8; member_scores.len()],
        vec![0u8; non_member_scores.len()],
    ]
    .concat();
    let preds = PredictionSet::new(labels, [member_scores, non_member_scores].concat())?;
    let roc = metrics::roc_auc(&preds)?;
    Ok(MembershipResult {
        member_scores: member_scores.to_vec(),
        non_member_scores: non_member_scores.to_vec(),
        auc: roc.auc,
        advantage: roc.max_youden(),
    })
}

fn attack_features(model: &dyn Predictor, x: &[f64], y: u8, spec: AttackFeatures) -> Vec<f64> {
    let p = model.predict(x);
    let confidence = p.max(1.0 - p);
    let loss = models::log_loss(p, y);
    match spec {
        AttackFeatures::Confidence => vec![confidence],
        AttackFeatures::Loss => vec![loss],
        AttackFeatures::ConfidenceAndLoss => vec![confidence, loss],
    }
}

/// Logistic attack classifier on standardized features.
struct AttackModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    model: Model,
}

impl AttackModel {
    fn fit(rows: &[Vec<f64>], labels: Vec<u8>, seed: u64) -> Result<Self> {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let std_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| (0..d).map(|j| (r[j] - mean[j]) / scale[j]).collect())
            .collect();
        let ds = Dataset::from_rows(&std_rows, labels, None)?;
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 100,
            batch_size: 64,
            weight_decay: 0.0,
            seed,
        };
        Ok(Self {
            mean,
            scale,
            model: models::train(&ds, &Architecture::Logistic, &cfg)?,
        })
    }

    fn score(&self, f: &[f64]) -> f64 {
        let z: Vec<f64> = f
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        self.model.predict(&z)
    }
}

/// Shadow-model membership inference against `target`.
///
/// Each shadow trains on a seeded half of the shadow pool (its "in" rows) and
/// is queried on the other half ("out" rows); the attack classifier learns to
/// separate the two from the shadows' outputs and then scores the target's
/// members and non-members.
pub fn mia_shadow_attack(
    target: &dyn Predictor,
    pool: &Dataset,
    split: &MiaSplit,
    setup: &MiaSetup,
) -> Result<MembershipResult> {
    split.validate(pool.n())?;
    if setup.shadow_count == 0 {
        return Err(AuditError::invalid("need at least one shadow model"));
    }
    let half = split.target_train.len().min(split.shadow_pool.len() / 2);
    if half < 2 {
        return Err(AuditError::invalid(format!(
            "shadow pool of {} rows is too small",
            split.shadow_pool.len()
        )));
    }
    let shadows: Vec<(Vec<Vec<f64>>, Vec<u8>)> = (0..setup.shadow_count)
        .into_par_iter()
        .map(|s| {
            let seed = rng::derive_seed(setup.seed, s as u64);
            let mut rows = split.shadow_pool.clone();
            rows.shuffle(&mut rng::stream(seed, streams::MIA));
            let (inside, outside) = (&rows[..half], &rows[half..2 * half]);
            let cfg = TrainConfig {
                seed,
                ..setup.shadow_train.clone()
            };
            let shadow = models::train(&pool.subset(inside), &setup.shadow_arch, &cfg)?;
            let mut feats = Vec::with_capacity(2 * half);
            let mut labels = Vec::with_capacity(2 * half);
            for (set, member) in [(inside, 1u8), (outside, 0u8)] {
                for &i in set {
                    feats.push(attack_features(
                        &shadow,
                        pool.row(i),
                        pool.labels()[i],
                        setup.features,
                    ));
                    labels.push(member);
                }
            }
            Ok((feats, labels))
        })
        .collect::<Result<_>>()?;
    let (mut feats, mut labels) = (Vec::new(), Vec::new());
    for (f, l) in shadows {
        feats.extend(f);
        labels.extend(l);
    }
    let attack = AttackModel::fit(&feats, labels, setup.seed)?;
    let score = |rows: &[usize]| -> Vec<f64> {
        rows.iter()
            .map(|&i| {
                attack.score(&attack_features(
                    target,
                    pool.row(i),
                    pool.labels()[i],
                    setup.features,
                ))
            })
            .collect()
    };
    score_membership(&score(&split.members), &score(&split.non_members))
}

// ---------------------------------------------------------------------------
// Evasion
// ---------------------------------------------------------------------------

/// Per-coordinate box the adversarial input must stay in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBounds {
    pub fn unbounded(d: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; d],
            upper: vec![f64::INFINITY; d],
        }
    }

    pub fn uniform(d: usize, lower: f64, upper: f64) -> Self {
        Self {
            lower: vec![lower; d],
            upper: vec![upper; d],
        }
    }

    /// Column minima and maxima of a dataset.
    pub fn from_dataset(ds: &Dataset) -> Self {
        let d = ds.d();
        let mut b = Self::uniform(d, f64::INFINITY, f64::NEG_INFINITY);
        for r in ds.rows() {
            for j in 0..d {
                b.lower[j] = b.lower[j].min(r[j]);
                b.upper[j] = b.upper[j].max(r[j]);
            }
        }
        b
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }
}

fn check_attack_input(model: &Model, x: &[f64], eps: f64, bounds: &DomainBounds) -> Result<()> {
    if !model.architecture.is_dense() {
        return Err(AuditError::Unsupported(
            "gradient attacks need a logistic or mlp model".into(),
        ));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(AuditError::invalid("eps must be finite and >= 0"));
    }
    if bounds.lower.len() != x.len() || bounds.upper.len() != x.len() {
        return Err(AuditError::Schema("bounds width differs from input".into()));
    }
    if !bounds.contains(x) {
        return Err(AuditError::invalid("input lies outside the domain bounds"));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamp `v` into `[x0 - eps, x0 + eps]` and `[lo, hi]` such that the
/// computed `|v - x0|` never exceeds `eps`.
fn project(v: f64, x0: f64, eps: f64, lo: f64, hi: f64) -> f64 {
    let mut p = v.clamp(x0 - eps, x0 + eps).clamp(lo, hi);
    while (p - x0).abs() > eps {
        p = if p > x0 { p.next_down() } else { p.next_up() };
    }
    p
}

fn signed_step(
    model: &Model,
    x: &[f64],
    label: u8,
    step: f64,
    x0: &[f64],
    eps: f64,
    bounds: &DomainBounds,
) -> Result<Vec<f64>> {
    let g = model.input_gradient(x, label)?;
    Ok((0..x.len())
        .map(|j| {
            project(
                x[j] + step * sign(g[j]),
                x0[j],
                eps,
                bounds.lower[j],
                bounds.upper[j],
            )
        })
        .collect())
}

/// `x + eps * sign(grad_x loss)`, projected into the domain.
pub fn fgsm(
    model: &Model,
    x: &[f64],
    label: u8,
    eps: f64,
    bounds: &DomainBounds,
) -> Result<Vec<f64>> {
    check_attack_input(model, x, eps, bounds)?;
    signed_step(model, x, label, eps, x, eps, bounds)
}

/// Every iterate of projected gradient-sign ascent, starting at `x`
/// (excluded). The last entry is the attack output.
pub fn pgd_iterates(
    model: &Model,
    x: &[f64],
    label: u8,
    eps: f64,
    alpha: f64,
    iters: usize,
    bounds: &DomainBounds,
) -> Result<Vec<Vec<f64>>> {
    check_attack_input(model, x, eps, bounds)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(AuditError::invalid("step size must be > 0"));
    }
    let mut out = Vec::with_capacity(iters);
    let mut cur = x.to_vec();
    for _ in 0..iters {
        cur = signed_step(model, &cur, label, alpha, x, eps, bounds)?;
        out.push(cur.clone());
    }
    Ok(out)
}

pub fn pgd(
    model: &Model,
    x: &[f64],
    label: u8,
    eps: f64,
    alpha: f64,
    iters: usize,
    bounds: &DomainBounds,
) -> Result<Vec<f64>> {
    Ok(pgd_iterates(model, x, label, eps, alpha, iters, bounds)?
        .pop()
        .unwrap_or_else(|| x.to_vec()))
}

pub fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvasionAttack {
    Fgsm { eps: f64 },
    Pgd { eps: f64, alpha: f64, iters: usize },
}

impl EvasionAttack {
    pub fn eps(&self) -> f64 {
        match *self {
            EvasionAttack::Fgsm { eps } | EvasionAttack::Pgd { eps, .. } => eps,
        }
    }

    pub fn run(
        &self,
        model: &Model,
        x: &[f64],
        label: u8,
        bounds: &DomainBounds,
    ) -> Result<Vec<f64>> {
        match *self {
            EvasionAttack::Fgsm { eps } => fgsm(model, x, label, eps, bounds),
            EvasionAttack::Pgd { eps, alpha, iters } => {
                pgd(model, x, label, eps, alpha, iters, bounds)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvasionResult {
    pub adversarial: Vec<Vec<f64>>,
    /// Rows whose predicted label (at 0.5) flipped.
    pub flipped: Vec<bool>,
    pub success_rate: f64,
    pub max_linf: f64,
}

/// Attack every row of `ds` with its own label.
pub fn run_evasion(
    model: &Model,
    ds: &Dataset,
    attack: &EvasionAttack,
    bounds: &DomainBounds,
) -> Result<EvasionResult> {
    let adversarial: Vec<Vec<f64>> = (0..ds.n())
        .into_par_iter()
        .map(|i| attack.run(model, ds.row(i), ds.labels()[i], bounds))
        .collect::<Result<_>>()?;
    let flipped: Vec<bool> = adversarial
        .iter()
        .zip(ds.rows())
        .map(|(a, x)| (model.predict(a) >= 0.5) != (model.predict(x) >= 0.5))
        .collect();
    let max_linf = adversarial
        .iter()
        .zip(ds.rows())
        .map(|(a, x)| linf_distance(a, x))
        .fold(0.0, f64::max);
    Ok(EvasionResult {
        success_rate: flipped.iter().filter(|&&f| f).count() as f64 / ds.n() as f64,
        adversarial,
        flipped,
        max_linf,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooEstimate {
    pub gradient: Vec<f64>,
    pub queries: usize,
    pub warnings: Vec<String>,
}

/// Central differences `(f(x + h e_j) - f(x - h e_j)) / 2h`, `2d` queries.
pub fn zoo_gradient(model: &dyn Predictor, x: &[f64], h: f64) -> Result<ZooEstimate> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(AuditError::invalid("h must be > 0"));
    }
    if model.n_features() != x.len() {
        return Err(AuditError::Schema("query width differs from model".into()));
    }
    let mut warnings = Vec::new();
    let mut z = x.to_vec();
    let mut gradient = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let (up, down) = (x[j] + h, x[j] - h);
        if up == x[j] || down == x[j] {
            warnings.push(format!(
                "coordinate {j}: step {h} is below the resolution of {}",
                x[j]
            ));
        }
        z[j] = up;
        let f_up = model.predict(&z);
        z[j] = down;
        let f_down = model.predict(&z);
        z[j] = x[j];
        gradient.push((f_up - f_down) / (2.0 * h));
    }
    Ok(ZooEstimate {
        gradient,
        queries: 2 * x.len(),
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Defense comparison
// ---------------------------------------------------------------------------

/// Outcome of one attack run, with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub config: serde_json::Value,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    pub metric: String,
    pub baseline: f64,
    pub defended: f64,
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseComparison {
    pub config: serde_json::Value,
    pub seed: u64,
    pub rows: Vec<DefenseRow>,
}

pub fn evaluate_defense(
    baseline: &AttackReport,
    defended: &AttackReport,
) -> Result<DefenseComparison> {
    if baseline.config != defended.config || baseline.seed != defended.seed {
        return Err(AuditError::invalid(
            "baseline and defended runs used different attack configurations",
        ));
    }
    if baseline.metrics.keys().ne(defended.metrics.keys()) {
        return Err(AuditError::invalid(
            "baseline and defended runs report different metrics",
        ));
    }
    Ok(DefenseComparison {
        config: baseline.config.clone(),
        seed: baseline.seed,
        rows: baseline
            .metrics
            .iter()
            .zip(defended.metrics.values())
            .map(|((k, &b), &d)| DefenseRow {
                metric: k.clone(),
                baseline: b,
                defended: d,
                change: d - b,
            })
            .collect(),
    })
}
