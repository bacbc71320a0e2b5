//! Trainable predictors: logistic regression, small MLPs and CART trees.
//!
//! Dense models share one flat parameter vector. Layer `l` contributes its
//! weight matrix (row-major, `out x in`) followed by its bias vector; logistic
//! regression is the network with no hidden layers, so its layout is
//! `[w_1, ..., w_d, b]`. The output unit is always a sigmoid.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{AuditError, Result};
use crate::rng::{self, streams};
use crate::scalar::sigmoid;

/// Clamp applied to probabilities inside the log-loss.
pub const PROB_CLAMP: f64 = 1e-12;

pub const MAX_HIDDEN_LAYERS: usize = 3;

pub const MODEL_FORMAT: &str = "clinaudit-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `ln(1 + exp(beta * x)) / beta`; approaches ReLU as `beta` grows.
    Softplus {
        beta: f64,
    },
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::Softplus { beta } if !(beta > 0.0 && beta.is_finite()) => Err(
                AuditError::invalid(format!("softplus beta must be positive, got {beta}")),
            ),
            _ => Ok(()),
        }
    }

    #[inline]
    fn apply(&self, z: f64) -> f64 {
        match *self {
            Activation::Relu => z.max(0.0),
            Activation::Softplus { beta } => {
                let t = beta * z;
                if t > 30.0 {
                    z + (-t).exp().ln_1p() / beta
                } else {
                    t.exp().ln_1p() / beta
                }
            }
        }
    }

    #[inline]
    fn derivative(&self, z: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus { beta } => sigmoid(beta * z),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Logistic,
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
    },
    Tree {
        max_depth: usize,
        min_leaf: usize,
    },
}

impl Architecture {
    pub fn is_dense(&self) -> bool {
        !matches!(self, Architecture::Tree { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Logistic => Ok(()),
            Architecture::Mlp { hidden, activation } => {
                activation.validate()?;
                if hidden.is_empty() || hidden.len() > MAX_HIDDEN_LAYERS {
                    return Err(AuditError::invalid(format!(
                        "mlp needs 1..={MAX_HIDDEN_LAYERS} hidden layers, got {}",
                        hidden.len()
                    )));
                }
                if hidden.contains(&0) {
                    return Err(AuditError::invalid("mlp hidden layer of width 0"));
                }
                Ok(())
            }
            Architecture::Tree { min_leaf, .. } => {
                if *min_leaf == 0 {
                    Err(AuditError::invalid("tree min_leaf must be >= 1"))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Layer widths from input to the single output unit.
    fn widths(&self, input_dim: usize) -> Vec<usize> {
        let mut w = vec![input_dim];
        if let Architecture::Mlp { hidden, .. } = self {
            w.extend_from_slice(hidden);
        }
        w.push(1);
        w
    }

    fn activation(&self) -> Activation {
        match self {
            Architecture::Mlp { activation, .. } => *activation,
            _ => Activation::Relu,
        }
    }

    pub fn parameter_count(&self, input_dim: usize) -> usize {
        let w = self.widths(input_dim);
        w.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// L2 penalty `lambda / 2 * ||W||^2` on weights (biases are not penalized).
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 100,
            batch_size: 32,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AuditError::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(AuditError::invalid("batch size must be >= 1"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(AuditError::invalid("weight decay must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        positives: usize,
        count: usize,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum Parameters {
    Dense(Vec<f64>),
    Tree(Vec<TreeNode>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub feature_names: Vec<String>,
    pub parameters: Parameters,
    pub trained: bool,
}

/// Anything that maps a feature row to a class-1 probability.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;

    fn predict(&self, x: &[f64]) -> f64;

    fn predict_rows(&self, ds: &Dataset) -> Vec<f64> {
        ds.rows().map(|r| self.predict(r)).collect()
    }
}

/// Wraps a closure as a [`Predictor`].
pub struct FnPredictor<F> {
    pub d: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn n_features(&self) -> usize {
        self.d
    }

    fn predict(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

impl Model {
    /// Untrained dense model with seeded initial parameters.
    ///
    /// Logistic models start at zero; MLP weights are Glorot-uniform with zero
    /// biases.
    pub fn init(architecture: Architecture, input_dim: usize, seed: u64) -> Result<Self> {
        architecture.validate()?;
        if !architecture.is_dense() {
            return Err(AuditError::Unsupported(
                "trees have no parameter initialization; use train_tree".into(),
            ));
        }
        let widths = architecture.widths(input_dim);
        let mut params = Vec::with_capacity(architecture.parameter_count(input_dim));
        let mut rng = rng::stream(seed, streams::INIT);
        let glorot = matches!(architecture, Architecture::Mlp { .. });
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(if glorot { rng.random_range(-a..a) } else { 0.0 });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            architecture,
            input_dim,
            feature_names: crate::data::default_names(input_dim),
            parameters: Parameters::Dense(params),
            trained: false,
        })
    }

    /// Logistic model with the given weights and bias, marked trained.
    pub fn logistic(weights: &[f64], bias: f64) -> Self {
        let mut params = weights.to_vec();
        params.push(bias);
        Self {
            architecture: Architecture::Logistic,
            input_dim: weights.len(),
            feature_names: crate::data::default_names(weights.len()),
            parameters: Parameters::Dense(params),
            trained: true,
        }
    }

    pub fn dense_params(&self) -> Option<&[f64]> {
        match &self.parameters {
            Parameters::Dense(p) => Some(p),
            Parameters::Tree(_) => None,
        }
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if !self.architecture.is_dense()
            || params.len() != self.architecture.parameter_count(self.input_dim)
        {
            return Err(AuditError::invalid(
                "parameter vector does not match architecture",
            ));
        }
        Ok(Self {
            parameters: Parameters::Dense(params),
            ..self.clone()
        })
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if !self.trained {
            return Err(AuditError::Untrained);
        }
        if width != self.input_dim {
            return Err(AuditError::Schema(format!(
                "model expects {} features, got {}",
                self.input_dim, width
            )));
        }
        Ok(())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x.len())?;
        Ok(self.predict_unchecked(x))
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        self.check_input(ds.d())?;
        Ok(ds.rows().map(|r| self.predict_unchecked(r)).collect())
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        match &self.parameters {
            Parameters::Dense(p) => self.net().forward(p, x).probability(),
            Parameters::Tree(nodes) => tree_predict(nodes, x),
        }
    }

    fn net(&self) -> DenseNet {
        DenseNet::new(&self.architecture, self.input_dim)
    }

    /// Number of leaves for trees; parameter count for dense models.
    pub fn complexity(&self) -> usize {
        match &self.parameters {
            Parameters::Dense(p) => p.len(),
            Parameters::Tree(nodes) => nodes
                .iter()
                .filter(|n| matches!(n, TreeNode::Leaf { .. }))
                .count(),
        }
    }

    pub fn tree_depth(&self) -> Option<usize> {
        match &self.parameters {
            Parameters::Tree(nodes) => Some(tree_depth(nodes, 0)),
            Parameters::Dense(_) => None,
        }
    }

    /// Gradient of the per-example log-loss with respect to the input row.
    pub fn input_gradient(&self, x: &[f64], label: u8) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        match &self.parameters {
            Parameters::Dense(p) => {
                let net = self.net();
                let fwd = net.forward(p, x);
                Ok(net.backward(p, &fwd, label, false).input)
            }
            Parameters::Tree(_) => Err(AuditError::Unsupported(
                "tree models have no input gradient".into(),
            )),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_FORMAT_VERSION {
            return Err(AuditError::Schema(format!(
                "unsupported model document {} v{}",
                doc.format, doc.version
            )));
        }
        if let Parameters::Dense(p) = &doc.model.parameters {
            if p.len() != doc.model.architecture.parameter_count(doc.model.input_dim) {
                return Err(AuditError::Schema(
                    "parameter count does not match architecture".into(),
                ));
            }
        }
        Ok(doc.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| AuditError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AuditError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

impl Predictor for Model {
    fn n_features(&self) -> usize {
        self.input_dim
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.predict_unchecked(x)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    model: Model,
}

// ---------------------------------------------------------------------------
// Dense forward / backward
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct DenseNet {
    widths: Vec<usize>,
    activation: Activation,
}

pub(crate) struct Forward {
    /// Pre-activations per layer (last entry is the output logit).
    pre: Vec<Vec<f64>>,
    /// Layer inputs: `inputs[0]` is x, `inputs[l]` the activation feeding layer l.
    inputs: Vec<Vec<f64>>,
}

impl Forward {
    pub(crate) fn logit(&self) -> f64 {
        self.pre.last().expect("at least one layer")[0]
    }

    pub(crate) fn probability(&self) -> f64 {
        sigmoid(self.logit())
    }
}

pub(crate) struct Backward {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

/// Log-loss of one prediction; the probability given to the observed class
/// is floored at `PROB_CLAMP`.
pub fn log_loss(p: f64, label: u8) -> f64 {
    let q = if label == 1 { p } else { 1.0 - p };
    -q.max(PROB_CLAMP).ln()
}

impl DenseNet {
    pub(crate) fn new(arch: &Architecture, input_dim: usize) -> Self {
        Self {
            widths: arch.widths(input_dim),
            activation: arch.activation(),
        }
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub(crate) fn forward(&self, params: &[f64], x: &[f64]) -> Forward {
        let mut inputs = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers());
        let mut offset = 0;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let w = &params[offset..offset + n_in * n_out];
            let b = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let a = &inputs[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    row.iter().zip(a).fold(0.0, |acc, (wi, ai)| acc + wi * ai) + b[o]
                })
                .collect();
            if l + 1 < self.layers() {
                inputs.push(z.iter().map(|&v| self.activation.apply(v)).collect());
            }
            pre.push(z);
        }
        Forward { pre, inputs }
    }

    /// Gradients of the unregularized per-example log-loss. The clamp is
    /// ignored here: d loss / d logit = p - y.
    pub(crate) fn backward(
        &self,
        params: &[f64],
        fwd: &Forward,
        label: u8,
        want_params: bool,
    ) -> Backward {
        let mut grad = if want_params {
            vec![0.0; params.len()]
        } else {
            Vec::new()
        };
        let mut delta = vec![fwd.probability() - f64::from(label)];
        let mut offsets = Vec::with_capacity(self.layers());
        let mut off = 0;
        for l in 0..self.layers() {
            offsets.push(off);
            off += self.widths[l] * self.widths[l + 1] + self.widths[l + 1];
        }
        let mut input_grad = Vec::new();
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let base = offsets[l];
            let a = &fwd.inputs[l];
            if want_params {
                for o in 0..n_out {
                    let g = &mut grad[base + o * n_in..base + (o + 1) * n_in];
                    for (gi, ai) in g.iter_mut().zip(a) {
                        *gi = delta[o] * ai;
                    }
                    grad[base + n_in * n_out + o] = delta[o];
                }
            }
            let w = &params[base..base + n_in * n_out];
            let mut upstream = vec![0.0; n_in];
            for o in 0..n_out {
                for i in 0..n_in {
                    upstream[i] += w[o * n_in + i] * delta[o];
                }
            }
            if l == 0 {
                input_grad = upstream;
            } else {
                let z = &fwd.pre[l - 1];
                delta = upstream
                    .iter()
                    .zip(z)
                    .map(|(u, &zi)| u * self.activation.derivative(zi))
                    .collect();
            }
        }
        Backward {
            params: grad,
            input: input_grad,
        }
    }

    /// 1.0 on weight coordinates, 0.0 on biases.
    pub(crate) fn weight_mask(&self) -> Vec<f64> {
        let mut mask = Vec::new();
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            mask.extend(std::iter::repeat_n(1.0, n_in * n_out));
            mask.extend(std::iter::repeat_n(0.0, n_out));
        }
        mask
    }

    pub(crate) fn example_loss_grad(
        &self,
        params: &[f64],
        x: &[f64],
        label: u8,
    ) -> (f64, Vec<f64>) {
        let fwd = self.forward(params, x);
        let loss = log_loss(fwd.probability(), label);
        (loss, self.backward(params, &fwd, label, true).params)
    }
}

/// Mean log-loss over a batch plus `lambda / 2 * ||W||^2`, and its gradient.
pub fn loss_and_grad(
    model: &Model,
    rows: &[&[f64]],
    labels: &[u8],
    weight_decay: f64,
) -> Result<(f64, Vec<f64>)> {
    let params = model
        .dense_params()
        .ok_or_else(|| AuditError::Unsupported("trees have no gradient".into()))?;
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(AuditError::invalid(
            "batch must be non-empty with one label per row",
        ));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != model.input_dim) {
        return Err(AuditError::Schema(format!(
            "model expects {} features, got {}",
            model.input_dim,
            r.len()
        )));
    }
    let net = model.net();
    Ok(batch_loss_grad(
        &net,
        params,
        rows,
        labels,
        weight_decay,
        &net.weight_mask(),
    ))
}

pub(crate) fn batch_loss_grad(
    net: &DenseNet,
    params: &[f64],
    rows: &[&[f64]],
    labels: &[u8],
    weight_decay: f64,
    mask: &[f64],
) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (x, &y) in rows.iter().zip(labels) {
        let (l, g) = net.example_loss_grad(params, x, y);
        loss += l;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    let b = rows.len() as f64;
    loss /= b;
    for g in grad.iter_mut() {
        *g /= b;
    }
    if weight_decay > 0.0 {
        let mut sq = 0.0;
        for ((g, &p), &m) in grad.iter_mut().zip(params).zip(mask) {
            *g += weight_decay * m * p;
            sq += m * p * p;
        }
        loss += 0.5 * weight_decay * sq;
    }
    (loss, grad)
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

/// Shuffled row order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, streams::EPOCH_BASE + epoch as u64));
    idx
}

/// Fixed-size batches of an epoch's shuffled order; the final batch holds
/// the remainder.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    epoch_order(n, seed, epoch)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Plain mini-batch SGD on `params`, running epochs
/// `epoch_offset..epoch_offset + cfg.epochs` of the batch schedule.
/// Returns the mean batch loss of every epoch.
pub(crate) fn sgd_in_place(
    arch: &Architecture,
    params: &mut [f64],
    ds: &Dataset,
    cfg: &TrainConfig,
    epoch_offset: usize,
) -> Result<Vec<f64>> {
    let net = DenseNet::new(arch, ds.d());
    let mask = net.weight_mask();
    let mut history = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let epoch = epoch_offset + e;
        let mut total = 0.0;
        let batches = epoch_batches(ds.n(), cfg.batch_size, cfg.seed, epoch);
        for batch in &batches {
            let rows: Vec<&[f64]> = batch.iter().map(|&i| ds.row(i)).collect();
            let labels: Vec<u8> = batch.iter().map(|&i| ds.labels()[i]).collect();
            let (loss, grad) =
                batch_loss_grad(&net, params, &rows, &labels, cfg.weight_decay, &mask);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
                return Err(AuditError::Divergence {
                    context: "sgd training".into(),
                    step: epoch,
                });
            }
            total += loss;
        }
        history.push(total / batches.len() as f64);
    }
    Ok(history)
}

/// Trained model plus per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub epoch_losses: Vec<f64>,
}

pub fn train(ds: &Dataset, arch: &Architecture, cfg: &TrainConfig) -> Result<Model> {
    train_with_history(ds, arch, cfg).map(|o| o.model)
}

pub fn train_with_history(
    ds: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if let Architecture::Tree {
        max_depth,
        min_leaf,
    } = *arch
    {
        return Ok(TrainOutcome {
            model: train_tree(ds, max_depth, min_leaf)?,
            epoch_losses: Vec::new(),
        });
    }
    cfg.validate()?;
    ds.require_both_classes("train")?;
    let mut model = Model::init(arch.clone(), ds.d(), cfg.seed)?;
    model.feature_names = ds.feature_names().to_vec();
    let Parameters::Dense(mut params) = model.parameters else {
        unreachable!("dense init")
    };
    let epoch_losses = sgd_in_place(arch, &mut params, ds, cfg, 0)?;
    model.parameters = Parameters::Dense(params);
    model.trained = true;
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}

/// Mean unregularized log-loss of a model on a dataset.
pub fn dataset_log_loss(model: &Model, ds: &Dataset) -> Result<f64> {
    let p = model.predict_dataset(ds)?;
    Ok(p.iter()
        .zip(ds.labels())
        .map(|(&p, &y)| log_loss(p, y))
        .sum::<f64>()
        / ds.n() as f64)
}

pub fn accuracy(model: &dyn Predictor, ds: &Dataset) -> f64 {
    let hits = ds
        .rows()
        .zip(ds.labels())
        .filter(|(x, &y)| u8::from(model.predict(x) >= 0.5) == y)
        .count();
    hits as f64 / ds.n() as f64
}

// ---------------------------------------------------------------------------
// CART
// ---------------------------------------------------------------------------

fn tree_predict(nodes: &[TreeNode], x: &[f64]) -> f64 {
    let mut at = 0;
    loop {
        match nodes[at] {
            TreeNode::Leaf { positives, count } => return positives as f64 / count as f64,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => at = if x[feature] <= threshold { left } else { right },
        }
    }
}

fn tree_depth(nodes: &[TreeNode], at: usize) -> usize {
    match nodes[at] {
        TreeNode::Leaf { .. } => 0,
        TreeNode::Split { left, right, .. } => {
            1 + tree_depth(nodes, left).max(tree_depth(nodes, right))
        }
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a> {
    ds: &'a Dataset,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, rows: &[usize], depth: usize) -> usize {
        let labels = self.ds.labels();
        let pos = rows.iter().filter(|&&i| labels[i] == 1).count();
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            positives: pos,
            count: rows.len(),
        });
        if depth >= self.max_depth
            || pos == 0
            || pos == rows.len()
            || rows.len() < 2 * self.min_leaf
        {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(rows, pos) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.ds.row(i)[feature] <= threshold);
        let left = self.build(&l, depth + 1);
        let right = self.build(&r, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    /// Gini-minimizing split with midpoint threshold; first best wins ties.
    fn best_split(&self, rows: &[usize], pos: usize) -> Option<(usize, f64)> {
        let n = rows.len();
        let labels = self.ds.labels();
        let parent = gini(pos, n);
        let mut best: Option<(f64, usize, f64)> = None;
        for j in 0..self.ds.d() {
            let mut sorted: Vec<(f64, u8)> = rows
                .iter()
                .map(|&i| (self.ds.row(i)[j], labels[i]))
                .collect();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for s in 0..n - 1 {
                left_pos += usize::from(sorted[s].1);
                let n_left = s + 1;
                if sorted[s].0 == sorted[s + 1].0
                    || n_left < self.min_leaf
                    || n - n_left < self.min_leaf
                {
                    continue;
                }
                let impurity = (n_left as f64 * gini(left_pos, n_left)
                    + (n - n_left) as f64 * gini(pos - left_pos, n - n_left))
                    / n as f64;
                if parent - impurity <= 1e-12 {
                    continue;
                }
                if best.is_none_or(|(b, _, _)| impurity < b) {
                    let (lo, hi) = (sorted[s].0, sorted[s + 1].0);
                    let mut mid = lo + (hi - lo) / 2.0;
                    if mid >= hi {
                        mid = lo;
                    }
                    best = Some((impurity, j, mid));
                }
            }
        }
        best.map(|(_, j, t)| (j, t))
    }
}

/// CART with Gini impurity. Degenerate data (no impurity-reducing split)
/// yields a single majority leaf.
pub fn train_tree(ds: &Dataset, max_depth: usize, min_leaf: usize) -> Result<Model> {
    let arch = Architecture::Tree {
        max_depth,
        min_leaf,
    };
    arch.validate()?;
    ds.require_both_classes("train_tree")?;
    let mut builder = TreeBuilder {
        ds,
        max_depth,
        min_leaf,
        nodes: Vec::new(),
    };
    let rows: Vec<usize> = (0..ds.n()).collect();
    builder.build(&rows, 0);
    Ok(Model {
        architecture: arch,
        input_dim: ds.d(),
        feature_names: ds.feature_names().to_vec(),
        parameters: Parameters::Tree(builder.nodes),
        trained: true,
    })
}
