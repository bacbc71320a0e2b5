//! `clinaudit` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use clinaudit::models::{Activation, Architecture, TrainConfig};
use clinaudit::report::SCHEMA_VERSION;
use clinaudit::AuditError;

/// Bad flags or config; exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "clinaudit", version = SCHEMA_VERSION, about = "Train and audit small clinical risk models")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct Global {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Input CSV.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "CLINAUDIT_OUT", default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
    /// TOML config file; flags given on the command line win.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Cross-validation, hold-out or external validation.
    Validate(ValidateArgs),
    /// Calibration curve, intercept, slope and ECE of a prediction file.
    Calibrate(CalibrateArgs),
    /// Decision curve of a prediction file.
    Dca(DcaArgs),
    /// Group metrics and fairness criteria of a prediction file.
    Fairness(FairnessArgs),
    /// Permutation importance, exact Shapley values or a surrogate tree.
    Explain(ExplainArgs),
    /// Train a model, optionally with DP-SGD.
    Train(TrainArgs),
    /// Federated averaging simulation from a TOML scenario.
    Fedsim(FedsimArgs),
    /// Privacy and robustness attacks.
    #[command(subcommand)]
    Attack(AttackCommand),
    /// Merge JSON reports.
    Report(ReportArgs),
}

impl Command {
    pub fn section(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Calibrate(_) => "calibrate",
            Command::Dca(_) => "dca",
            Command::Fairness(_) => "fairness",
            Command::Explain(_) => "explain",
            Command::Train(_) => "train",
            Command::Fedsim(_) => "fedsim",
            Command::Attack(a) => match a {
                AttackCommand::Mia(_) => "attack-mia",
                AttackCommand::Fgsm(_) => "attack-fgsm",
                AttackCommand::Pgd(_) => "attack-pgd",
                AttackCommand::Zoo(_) => "attack-zoo",
            },
            Command::Report(_) => "report",
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum AttackCommand {
    /// Shadow-model membership inference against a freshly trained target.
    Mia(MiaArgs),
    /// Fast gradient sign method.
    Fgsm(FgsmArgs),
    /// Projected gradient descent.
    Pgd(PgdArgs),
    /// Query-only gradient estimation.
    Zoo(ZooArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    Logistic,
    Mlp,
    Tree,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Relu,
    Softplus,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinningKind {
    EqualWidth,
    EqualFrequency,
}

impl From<BinningKind> for clinaudit::calibration::Binning {
    fn from(b: BinningKind) -> Self {
        match b {
            BinningKind::EqualWidth => Self::EqualWidth,
            BinningKind::EqualFrequency => Self::EqualFrequency,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "logistic")]
    pub arch: ArchKind,
    /// Hidden layer widths for `mlp`, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value = "relu")]
    pub activation: ActivationKind,
    #[arg(long, default_value_t = 1.0)]
    pub softplus_beta: f64,
    #[arg(long, default_value_t = 4)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
}

impl ModelArgs {
    pub fn architecture(&self) -> Architecture {
        match self.arch {
            ArchKind::Logistic => Architecture::Logistic,
            ArchKind::Mlp => Architecture::Mlp {
                hidden: self.hidden.clone(),
                activation: match self.activation {
                    ActivationKind::Relu => Activation::Relu,
                    ActivationKind::Softplus => Activation::Softplus {
                        beta: self.softplus_beta,
                    },
                },
            },
            ArchKind::Tree => Architecture::Tree {
                max_depth: self.max_depth,
                min_leaf: self.min_leaf,
            },
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            seed,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DpArgs {
    /// Train with DP-SGD.
    #[arg(long)]
    pub dp: bool,
    /// Per-example clip norm.
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    /// Noise multiplier.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
}

impl DpArgs {
    pub fn spec(&self) -> Option<clinaudit::privacy::PrivacySpec> {
        self.dp.then(|| clinaudit::privacy::PrivacySpec {
            clip_norm: self.clip,
            noise_multiplier: self.sigma,
            ..Default::default()
        })
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ValidateArgs {
    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Keep the class ratio in every fold (or hold-out side).
    #[arg(long)]
    pub stratified: bool,
    /// Leave-one-out instead of k folds.
    #[arg(long)]
    pub loocv: bool,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Train fraction for a single hold-out split instead of CV.
    #[arg(long)]
    pub holdout: Option<f64>,
    /// Confidence parameter of the hold-out error bound.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Saved model to score on the input as an external cohort.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Weight-decay grid for nested CV.
    #[arg(long, value_delimiter = ',')]
    pub nested_grid: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub inner_k: usize,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "auc,accuracy,sensitivity,specificity,log_loss,brier,ece"
    )]
    pub metrics: Vec<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model_args: ModelArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CalibrateArgs {
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long, value_enum, default_value = "equal-width")]
    pub binning: BinningKind,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DcaArgs {
    #[arg(long, default_value_t = 0.01)]
    pub grid_start: f64,
    #[arg(long, default_value_t = 0.99)]
    pub grid_stop: f64,
    #[arg(long, default_value_t = 0.01)]
    pub grid_step: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FairnessArgs {
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long, value_enum, default_value = "equal-width")]
    pub binning: BinningKind,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplainMethod {
    Permutation,
    Shapley,
    Surrogate,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportanceKind {
    Auc,
    Accuracy,
    NegLogLoss,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ExplainArgs {
    /// Saved model to explain.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "permutation")]
    pub method: ExplainMethod,
    #[arg(long, value_enum, default_value = "auc")]
    pub metric: ImportanceKind,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Row explained by `shapley`.
    #[arg(long, default_value_t = 0)]
    pub row: usize,
    /// Leading rows used as the Shapley background.
    #[arg(long, default_value_t = 50)]
    pub background: usize,
    #[arg(long, default_value_t = 3)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model_args: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub dp_args: DpArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FedsimArgs {
    /// TOML federation scenario.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Evaluation CSV scored after every round.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model_args: ModelArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Confidence,
    Loss,
    ConfidenceAndLoss,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct MiaArgs {
    #[arg(long, default_value_t = 100)]
    pub target_size: usize,
    /// Members probed, and non-members held out.
    #[arg(long, default_value_t = 100)]
    pub eval_size: usize,
    #[arg(long, default_value_t = 4)]
    pub shadows: usize,
    #[arg(long, value_enum, default_value = "confidence-and-loss")]
    pub features: FeatureKind,
    #[command(flatten)]
    #[serde(flatten)]
    pub model_args: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub dp_args: DpArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvasionArgs {
    /// Saved logistic or mlp model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Skip clamping to the observed feature range.
    #[arg(long)]
    pub unbounded: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FgsmArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub evasion: EvasionArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PgdArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub evasion: EvasionArgs,
    /// Step size.
    #[arg(long, default_value_t = 0.025)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ZooArgs {
    /// Saved model queried as a black box.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-4)]
    pub h: f64,
    /// Leading rows to estimate gradients at.
    #[arg(long, default_value_t = 10)]
    pub rows: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Reports to merge.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<AuditError>() {
        Some(e) if e.is_numeric() => 3,
        _ => 2,
    }
}

/// Error chain joined by `: `, dropping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match commands::run(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
