//! In-process FedAvg simulator.
//!
//! Client `k` trains with seed `train.seed + k` and, in round `r`, runs epochs
//! `r * local_epochs ..` of its batch schedule, so a single-client federation
//! replays centralized training exactly.

use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{AuditError, Result};
use crate::metrics;
use crate::models::{self, sgd_in_place, Architecture, Model, Parameters, TrainConfig};
use crate::predictions::PredictionSet;
use crate::privacy::{dp_sgd_in_place, PrivacySpec};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionPlan {
    #[default]
    Iid,
    /// Rows sorted by label and cut into contiguous blocks.
    LabelSkew,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub n_clients: usize,
    pub rounds: usize,
    pub client_fraction: f64,
    pub local_epochs: usize,
    pub partition: PartitionPlan,
    pub privacy: Option<PrivacySpec>,
    /// Probability that a selected client drops out of a round.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            n_clients: 4,
            rounds: 10,
            client_fraction: 1.0,
            local_epochs: 1,
            partition: PartitionPlan::Iid,
            privacy: None,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(AuditError::invalid("n_clients must be >= 1"));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(AuditError::invalid("client_fraction must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(AuditError::invalid("dropout must lie in [0, 1)"));
        }
        if let Some(p) = &self.privacy {
            if !(p.clip_norm > 0.0)
                || !(p.noise_multiplier >= 0.0 && p.noise_multiplier.is_finite())
            {
                return Err(AuditError::invalid(
                    "privacy needs clip_norm > 0 and noise_multiplier >= 0",
                ));
            }
        }
        Ok(())
    }

    /// `ceil(q * n_clients)`.
    pub fn clients_per_round(&self) -> usize {
        ((self.client_fraction * self.n_clients as f64).ceil() as usize).clamp(1, self.n_clients)
    }
}

/// Row indices of each client; within a client rows keep pool order.
pub fn partition_indices(
    pool: &Dataset,
    plan: PartitionPlan,
    n_clients: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let n = pool.n();
    if n_clients == 0 {
        return Err(AuditError::invalid("n_clients must be >= 1"));
    }
    if n_clients > n {
        return Err(AuditError::invalid(format!(
            "{n_clients} clients for {n} rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    match plan {
        PartitionPlan::Iid => order.shuffle(&mut rng::stream(seed, streams::FED_PARTITION)),
        PartitionPlan::LabelSkew => order.sort_by_key(|&i| pool.labels()[i]),
    }
    let (base, extra) = (n / n_clients, n % n_clients);
    let mut at = 0;
    Ok((0..n_clients)
        .map(|k| {
            let size = base + usize::from(k < extra);
            let mut chunk = order[at..at + size].to_vec();
            at += size;
            chunk.sort_unstable();
            chunk
        })
        .collect())
}

pub fn partition_data(
    pool: &Dataset,
    plan: PartitionPlan,
    n_clients: usize,
    seed: u64,
) -> Result<Vec<Dataset>> {
    Ok(partition_indices(pool, plan, n_clients, seed)?
        .iter()
        .map(|idx| pool.subset(idx))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: Vec<f64>,
    pub n_k: usize,
}

/// Local training starting from `global`. Fails with `SingleClass` when the
/// client holds one label only.
#[allow(clippy::too_many_arguments)]
pub fn client_update(
    global: &[f64],
    local: &Dataset,
    arch: &Architecture,
    train: &TrainConfig,
    local_epochs: usize,
    round: usize,
    client_id: usize,
    privacy: Option<&PrivacySpec>,
) -> Result<ClientUpdate> {
    if global.len() != arch.parameter_count(local.d()) {
        return Err(AuditError::Schema(format!(
            "global has {} parameters, architecture needs {}",
            global.len(),
            arch.parameter_count(local.d())
        )));
    }
    let mut params = global.to_vec();
    if local_epochs > 0 {
        local.require_both_classes(&format!("client {client_id}"))?;
        let cfg = TrainConfig {
            epochs: local_epochs,
            seed: train.seed.wrapping_add(client_id as u64),
            ..train.clone()
        };
        let offset = round * local_epochs;
        match privacy {
            Some(p) => {
                dp_sgd_in_place(arch, &mut params, local, &cfg, p, offset)?;
            }
            None => {
                sgd_in_place(arch, &mut params, local, &cfg, offset)?;
            }
        }
    }
    Ok(ClientUpdate {
        client_id,
        params,
        n_k: local.n(),
    })
}

/// `sum_k n_k * theta_k / sum_k n_k`, summed in ascending client id.
pub fn server_aggregate(updates: &[ClientUpdate]) -> Result<Vec<f64>> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    let first = sorted.first().ok_or(AuditError::EmptyAggregation)?;
    let len = first.params.len();
    if sorted.iter().any(|u| u.params.len() != len) {
        return Err(AuditError::Schema("client updates differ in length".into()));
    }
    let total: usize = sorted.iter().map(|u| u.n_k).sum();
    if total == 0 {
        return Err(AuditError::EmptyAggregation);
    }
    let mut out = vec![0.0; len];
    for u in &sorted {
        let w = u.n_k as f64;
        for (o, p) in out.iter_mut().zip(&u.params) {
            *o += w * p;
        }
    }
    let total = total as f64;
    for o in out.iter_mut() {
        *o /= total;
    }
    Ok(out)
}

/// FNV-1a over the bit patterns of the parameters.
pub fn checksum(params: &[f64]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in params {
        for b in p.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEval {
    pub accuracy: f64,
    pub log_loss: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<usize>,
    pub dropped: Vec<usize>,
    /// Selected clients that could not train, with the reason.
    pub skipped: Vec<(usize, String)>,
    /// `(client id, n_k)` of every aggregated update.
    pub sample_counts: Vec<(usize, usize)>,
    pub checksum: String,
    pub eval: Option<RoundEval>,
}

#[derive(Debug, Clone)]
pub struct FedOutcome {
    pub model: Model,
    pub rounds: Vec<RoundRecord>,
}

fn evaluate(model: &Model, ds: &Dataset) -> Result<RoundEval> {
    let preds = PredictionSet::from_model(model, ds)?;
    Ok(RoundEval {
        accuracy: models::accuracy(model, ds),
        log_loss: models::dataset_log_loss(model, ds)?,
        auc: metrics::auc(&preds).ok(),
    })
}

pub fn fedavg_run(
    pool: &Dataset,
    fed: &FederationConfig,
    arch: &Architecture,
    train: &TrainConfig,
    eval: Option<&Dataset>,
) -> Result<FedOutcome> {
    fed.validate()?;
    train.validate()?;
    let clients = partition_data(pool, fed.partition, fed.n_clients, fed.seed)?;
    let mut model = Model::init(arch.clone(), pool.d(), train.seed)?;
    model.feature_names = pool.feature_names().to_vec();
    model.trained = true;
    let Parameters::Dense(mut global) = model.parameters.clone() else {
        unreachable!("dense init")
    };
    let per_round = fed.clients_per_round();
    let mut rounds = Vec::with_capacity(fed.rounds);
    for round in 0..fed.rounds {
        let mut r = rng::stream(
            rng::derive_seed(fed.seed, round as u64),
            streams::FED_SELECT,
        );
        let mut selected = index::sample(&mut r, fed.n_clients, per_round).into_vec();
        selected.sort_unstable();
        let (active, dropped): (Vec<usize>, Vec<usize>) = if fed.dropout > 0.0 {
            selected
                .iter()
                .partition(|_| r.random::<f64>() >= fed.dropout)
        } else {
            (selected.clone(), Vec::new())
        };
        let results: Vec<(usize, Result<ClientUpdate>)> = active
            .par_iter()
            .map(|&k| {
                let u = client_update(
                    &global,
                    &clients[k],
                    arch,
                    train,
                    fed.local_epochs,
                    round,
                    k,
                    fed.privacy.as_ref(),
                );
                (k, u)
            })
            .collect();
        let mut updates = Vec::new();
        let mut skipped = Vec::new();
        for (k, res) in results {
            match res {
                Ok(u) => updates.push(u),
                Err(e @ AuditError::SingleClass(_)) => {
                    log::warn!("round {round}: client {k} skipped: {e}");
                    skipped.push((k, e.to_string()));
                }
                Err(e) => return Err(e),
            }
        }
        global = server_aggregate(&updates)?;
        model.parameters = Parameters::Dense(global.clone());
        rounds.push(RoundRecord {
            round,
            selected,
            dropped,
            skipped,
            sample_counts: updates.iter().map(|u| (u.client_id, u.n_k)).collect(),
            checksum: checksum(&global),
            eval: eval.map(|ds| evaluate(&model, ds)).transpose()?,
        });
    }
    Ok(FedOutcome { model, rounds })
}

pub fn write_round_log<W: Write>(rounds: &[RoundRecord], mut out: W) -> Result<()> {
    for r in rounds {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|source| AuditError::Io {
            path: "<round log>".into(),
            source,
        })?;
    }
    Ok(())
}
