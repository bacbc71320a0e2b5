//! Differential privacy: Laplace and Gaussian mechanisms, DP-SGD and basic
//! composition.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{AuditError, Result};
use crate::models::{epoch_batches, Architecture, DenseNet, Model, Parameters, TrainConfig};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrivacySpec {
    pub epsilon: f64,
    /// `0` selects pure epsilon-DP.
    pub delta: f64,
    /// L1 sensitivity for Laplace, L2 for Gaussian.
    pub sensitivity: f64,
    /// Per-example gradient clip norm `C`; may be infinite.
    pub clip_norm: f64,
    /// Noise multiplier `sigma`; DP-SGD adds `N(0, sigma^2 C^2 I)`.
    pub noise_multiplier: f64,
}

impl Default for PrivacySpec {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            delta: 1e-5,
            sensitivity: 1.0,
            clip_norm: 1.0,
            noise_multiplier: 1.0,
        }
    }
}

impl PrivacySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(AuditError::invalid("epsilon must be > 0"));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(AuditError::invalid("delta must lie in [0, 1)"));
        }
        if !(self.sensitivity > 0.0 && self.sensitivity.is_finite()) {
            return Err(AuditError::invalid("sensitivity must be > 0"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(AuditError::invalid("clip norm must be > 0"));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(AuditError::invalid("noise multiplier must be >= 0"));
        }
        Ok(())
    }

    pub fn is_pure(&self) -> bool {
        self.delta == 0.0
    }
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AuditError::invalid("mechanism input must be finite"));
    }
    Ok(())
}

/// `b = sensitivity / epsilon`.
pub fn laplace_scale(sensitivity: f64, epsilon: f64) -> Result<f64> {
    if !(sensitivity > 0.0 && epsilon > 0.0) {
        return Err(AuditError::invalid(
            "laplace needs sensitivity > 0 and epsilon > 0",
        ));
    }
    Ok(sensitivity / epsilon)
}

pub fn laplace_pdf(x: f64, mu: f64, b: f64) -> f64 {
    (-(x - mu).abs() / b).exp() / (2.0 * b)
}

/// One Laplace(0, b) draw by inverting the CDF.
pub fn sample_laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    // u in (-1/2, 1/2]
    let u = 0.5 - rng.random::<f64>();
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn laplace_mechanism(
    values: &[f64],
    sensitivity: f64,
    epsilon: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    check_values(values)?;
    let b = laplace_scale(sensitivity, epsilon)?;
    let mut r = rng::stream(seed, streams::MECHANISM);
    Ok(values
        .iter()
        .map(|v| v + sample_laplace(b, &mut r))
        .collect())
}

/// `sigma = sensitivity * sqrt(2 ln(1.25 / delta)) / epsilon`, valid for
/// `epsilon < 1`.
pub fn gaussian_sigma(sensitivity: f64, epsilon: f64, delta: f64) -> Result<f64> {
    if delta <= 0.0 {
        return Err(AuditError::invalid(
            "the gaussian mechanism cannot give pure epsilon-DP; delta must be > 0",
        ));
    }
    if delta >= 1.0 {
        return Err(AuditError::invalid("delta must be < 1"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(AuditError::invalid(
            "gaussian mechanism bound needs epsilon in (0, 1)",
        ));
    }
    if !(sensitivity > 0.0) {
        return Err(AuditError::invalid("sensitivity must be > 0"));
    }
    Ok(sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

pub fn gaussian_mechanism(
    values: &[f64],
    sensitivity: f64,
    epsilon: f64,
    delta: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    check_values(values)?;
    let sigma = gaussian_sigma(sensitivity, epsilon, delta)?;
    let normal = Normal::new(0.0, sigma).map_err(|e| AuditError::invalid(e.to_string()))?;
    let mut r = rng::stream(seed, streams::MECHANISM);
    Ok(values.iter().map(|v| v + normal.sample(&mut r)).collect())
}

pub fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `g / max(1, ||g|| / C)`; returns the clipped vector and the raw norm.
pub fn clip_gradient(g: &[f64], clip_norm: f64) -> (Vec<f64>, f64) {
    let norm = l2_norm(g);
    let mut factor = (norm / clip_norm).max(1.0);
    let mut out: Vec<f64> = g.iter().map(|v| v / factor).collect();
    // rounding can leave the scaled norm an ulp above C
    while factor > 1.0 && l2_norm(&out) > clip_norm {
        factor = factor.next_up();
        out = g.iter().map(|v| v / factor).collect();
    }
    (out, norm)
}

/// One optimizer step of DP-SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub step: usize,
    pub epoch: usize,
    pub batch_size: usize,
    pub max_raw_norm: f64,
    pub max_clipped_norm: f64,
    /// Standard deviation of the added noise, `sigma * C`.
    pub noise_scale: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct DpOutcome {
    pub model: Model,
    pub audit: Vec<AuditRecord>,
}

pub fn write_audit_log<W: Write>(records: &[AuditRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|source| AuditError::Io {
            path: "<audit log>".into(),
            source,
        })?;
    }
    Ok(())
}

/// DP-SGD over the same batch schedule as plain SGD, running epochs
/// `epoch_offset..epoch_offset + cfg.epochs`.
pub(crate) fn dp_sgd_in_place(
    arch: &Architecture,
    params: &mut [f64],
    ds: &Dataset,
    cfg: &TrainConfig,
    privacy: &PrivacySpec,
    epoch_offset: usize,
) -> Result<Vec<AuditRecord>> {
    let net = DenseNet::new(arch, ds.d());
    let mask = net.weight_mask();
    let c = privacy.clip_norm;
    let noise_scale = privacy.noise_multiplier * c;
    let noise = if privacy.noise_multiplier > 0.0 {
        if !noise_scale.is_finite() {
            return Err(AuditError::invalid("noise needs a finite clip norm"));
        }
        Some(Normal::new(0.0, noise_scale).map_err(|e| AuditError::invalid(e.to_string()))?)
    } else {
        None
    };
    let mut audit = Vec::new();
    for e in 0..cfg.epochs {
        let epoch = epoch_offset + e;
        let mut noise_rng =
            rng::stream(rng::derive_seed(cfg.seed, epoch as u64), streams::DP_NOISE);
        for batch in epoch_batches(ds.n(), cfg.batch_size, cfg.seed, epoch) {
            let per_example: Vec<(f64, Vec<f64>, f64)> = batch
                .par_iter()
                .map(|&i| {
                    let (loss, g) = net.example_loss_grad(params, ds.row(i), ds.labels()[i]);
                    let (clipped, raw) = clip_gradient(&g, c);
                    (loss, clipped, raw)
                })
                .collect();
            let b = batch.len() as f64;
            let mut grad = vec![0.0; params.len()];
            let mut loss = 0.0;
            let (mut max_raw, mut max_clipped) = (0.0f64, 0.0f64);
            for (l, g, raw) in &per_example {
                loss += l;
                max_raw = max_raw.max(*raw);
                max_clipped = max_clipped.max(l2_norm(g));
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            loss /= b;
            for g in grad.iter_mut() {
                *g /= b;
            }
            if let Some(normal) = &noise {
                for g in grad.iter_mut() {
                    *g += normal.sample(&mut noise_rng);
                }
            }
            if cfg.weight_decay > 0.0 {
                let mut sq = 0.0;
                for ((g, &p), &m) in grad.iter_mut().zip(params.iter()).zip(&mask) {
                    *g += cfg.weight_decay * m * p;
                    sq += m * p * p;
                }
                loss += 0.5 * cfg.weight_decay * sq;
            }
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            let step = audit.len();
            if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
                return Err(AuditError::Divergence {
                    context: "dp-sgd training".into(),
                    step,
                });
            }
            audit.push(AuditRecord {
                step,
                epoch,
                batch_size: batch.len(),
                max_raw_norm: max_raw,
                max_clipped_norm: max_clipped,
                noise_scale: if noise.is_some() { noise_scale } else { 0.0 },
                loss,
            });
        }
    }
    Ok(audit)
}

pub fn dp_sgd_train(
    ds: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    privacy: &PrivacySpec,
) -> Result<DpOutcome> {
    cfg.validate()?;
    if !(privacy.clip_norm > 0.0) {
        return Err(AuditError::invalid("clip norm must be > 0"));
    }
    if !(privacy.noise_multiplier >= 0.0 && privacy.noise_multiplier.is_finite()) {
        return Err(AuditError::invalid("noise multiplier must be >= 0"));
    }
    ds.require_both_classes("dp_sgd_train")?;
    let mut model = Model::init(arch.clone(), ds.d(), cfg.seed)?;
    model.feature_names = ds.feature_names().to_vec();
    let Parameters::Dense(mut params) = model.parameters else {
        unreachable!("dense init")
    };
    let audit = dp_sgd_in_place(arch, &mut params, ds, cfg, privacy, 0)?;
    model.parameters = Parameters::Dense(params);
    model.trained = true;
    Ok(DpOutcome { model, audit })
}

/// Basic composition: epsilons and deltas add. A loose upper bound.
pub fn compose_privacy(steps: &[(f64, f64)]) -> Result<(f64, f64)> {
    if steps.is_empty() {
        return Err(AuditError::invalid("nothing to compose"));
    }
    Ok(steps
        .iter()
        .fold((0.0, 0.0), |(e, d), &(ei, di)| (e + ei, d + di)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};
    use crate::models::{train, Activation};

    #[test]
    fn clipping_examples() {
        let (g, raw) = clip_gradient(&[3.0, 4.0], 2.5);
        assert_eq!(raw, 5.0);
        assert_eq!(g, vec![1.5, 2.0]);
        assert_eq!(l2_norm(&g), 2.5);
        let (g, _) = clip_gradient(&[0.3, -0.4], 2.5);
        assert_eq!(g, vec![0.3, -0.4]);
        let (g, _) = clip_gradient(&[1e300, 1e300], f64::INFINITY);
        assert_eq!(g, vec![1e300, 1e300]);
    }

    #[test]
    fn gaussian_sigma_examples() {
        let s = gaussian_sigma(1.0, 0.5, 1e-5).unwrap();
        assert!((s - 9.68961052521078).abs() < 1e-12, "{s}");
        assert!((gaussian_sigma(2.0, 0.5, 1e-5).unwrap() - 2.0 * s).abs() < 1e-12);
        assert!(gaussian_sigma(1.0, 0.5, 0.0).is_err());
        assert!(gaussian_sigma(1.0, 1.5, 1e-5).is_err());
    }

    #[test]
    fn laplace_variance_and_vanishing_noise() {
        let zeros = vec![0.0; 100_000];
        let x = laplace_mechanism(&zeros, 1.0, 1.0, 3).unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        assert!((var - 2.0).abs() < 0.1, "{var}");
        let y = laplace_mechanism(&[1.0, -2.0, 3.5], 1.0, 1e9, 3).unwrap();
        assert!(y
            .iter()
            .zip([1.0, -2.0, 3.5])
            .all(|(a, b)| (a - b).abs() < 1e-6));
        assert!(laplace_mechanism(&[f64::NAN], 1.0, 1.0, 0).is_err());
        assert_eq!(x, laplace_mechanism(&zeros, 1.0, 1.0, 3).unwrap());
    }

    #[test]
    fn laplace_density_ratio_bound() {
        let (delta_s, eps) = (1.0, 0.7);
        let b = laplace_scale(delta_s, eps).unwrap();
        for k in 0..=20 {
            let shift = delta_s * k as f64 / 20.0;
            for i in -400..=400 {
                let x = i as f64 * 0.05;
                let r = laplace_pdf(x, 0.0, b) / laplace_pdf(x, shift, b);
                assert!(r <= eps.exp() * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn gaussian_noise_spread() {
        let x = gaussian_mechanism(&vec![0.0; 50_000], 1.0, 0.5, 1e-5, 1).unwrap();
        let sd = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!((sd / 9.68961052521078 - 1.0).abs() < 0.02, "{sd}");
    }

    #[test]
    fn composition() {
        assert_eq!(compose_privacy(&[(0.5, 1e-6)]).unwrap(), (0.5, 1e-6));
        assert_eq!(
            compose_privacy(&[(1.0, 1e-6), (1.0, 1e-6)]).unwrap(),
            (2.0, 2e-6)
        );
        let (e, d) = compose_privacy(&vec![(0.01, 1e-8); 100]).unwrap();
        assert!((e - 1.0).abs() < 1e-12 && (d - 1e-6).abs() < 1e-18);
        assert!(compose_privacy(&[]).is_err());
    }

    fn task() -> Dataset {
        gen_synthetic(&SyntheticSpec::new(200, vec![1.5, -1.0, 0.5], 0.2, 5)).unwrap()
    }

    #[test]
    fn reduces_to_sgd_without_noise() {
        let ds = task();
        let arch = Architecture::Mlp {
            hidden: vec![5],
            activation: Activation::Softplus { beta: 2.0 },
        };
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            weight_decay: 1e-3,
            seed: 2,
            ..TrainConfig::default()
        };
        let plain = train(&ds, &arch, &cfg).unwrap();
        let privacy = PrivacySpec {
            clip_norm: f64::INFINITY,
            noise_multiplier: 0.0,
            ..PrivacySpec::default()
        };
        let dp = dp_sgd_train(&ds, &arch, &cfg, &privacy).unwrap();
        assert_eq!(dp.model.dense_params(), plain.dense_params());
        assert_eq!(dp.audit.len(), 5 * 13);
    }

    #[test]
    fn clipped_norms_bounded_and_log_written() {
        let ds = task();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 20,
            ..TrainConfig::default()
        };
        let privacy = PrivacySpec {
            clip_norm: 0.1,
            noise_multiplier: 1.0,
            ..PrivacySpec::default()
        };
        let out = dp_sgd_train(&ds, &Architecture::Logistic, &cfg, &privacy).unwrap();
        assert!(out.audit.iter().all(|r| r.max_clipped_norm <= 0.1));
        assert!(out.audit.iter().any(|r| r.max_raw_norm > 0.1));
        assert!(out.audit.iter().all(|r| r.noise_scale == 0.1));
        let mut buf = Vec::new();
        write_audit_log(&out.audit, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), out.audit.len());
        let first: AuditRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first, out.audit[0]);
        let again = dp_sgd_train(&ds, &Architecture::Logistic, &cfg, &privacy).unwrap();
        assert_eq!(again.model, out.model);
    }

    #[test]
    fn divergence_reports_step() {
        let ds = task();
        let cfg = TrainConfig {
            learning_rate: 1e308,
            epochs: 2,
            ..TrainConfig::default()
        };
        let privacy = PrivacySpec {
            clip_norm: 1e10,
            noise_multiplier: 1.0,
            ..PrivacySpec::default()
        };
        match dp_sgd_train(&ds, &Architecture::Logistic, &cfg, &privacy) {
            Err(AuditError::Divergence { .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
