//! Subcommand implementations. Each returns a report; `run` stamps and saves it.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::parser::ValueSource;
use clap::ArgMatches;
use log::info;
use serde_json::{json, Map, Value};

use clinaudit::attacks::{self, AttackFeatures, DomainBounds, EvasionAttack, MiaSetup, MiaSplit};
use clinaudit::calibration::calibration_report;
use clinaudit::data::{self, CsvOptions, Dataset, FoldMode};
use clinaudit::dca::{decision_curve, ThresholdGrid};
use clinaudit::explain::{self, ImportanceMetric};
use clinaudit::export;
use clinaudit::fairness::fairness_report;
use clinaudit::federated::{self, FederationConfig};
use clinaudit::metrics::holdout_error_bound;
use clinaudit::models::{self, Model, Predictor};
use clinaudit::predictions::{read_prediction_csv, PredictionSet, PredictionTable};
use clinaudit::privacy::{self, write_audit_log};
use clinaudit::report::{merge, EvaluationReport};
use clinaudit::validation::{self, Metric};

use crate::config;
use crate::{
    AttackCommand, CalibrateArgs, Cli, Command, DcaArgs, EvasionArgs, ExplainArgs, ExplainMethod,
    FairnessArgs, FeatureKind, FedsimArgs, Global, ImportanceKind, MiaArgs, ReportArgs, TrainArgs,
    UsageError, ValidateArgs, ZooArgs,
};

const SECTIONS: [&str; 12] = [
    "validate",
    "calibrate",
    "dca",
    "fairness",
    "explain",
    "train",
    "fedsim",
    "attack-mia",
    "attack-fgsm",
    "attack-pgd",
    "attack-zoo",
    "report",
];

struct Ctx {
    seed: u64,
    input: Option<PathBuf>,
    out: PathBuf,
}

impl Ctx {
    fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| UsageError("--input is required".into()).into())
    }

    fn dataset(&self, report: &mut EvaluationReport) -> Result<Dataset> {
        load_dataset(self.input()?, report)
    }

    fn predictions(&self) -> Result<PredictionTable> {
        let path = self.input()?;
        let file = File::open(path).map_err(|source| clinaudit::AuditError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(read_prediction_csv(file).with_context(|| format!("reading {}", path.display()))?)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        let f = File::create(&path).map_err(|source| clinaudit::AuditError::Io { path, source })?;
        Ok(BufWriter::new(f))
    }
}

fn load_dataset(path: &Path, report: &mut EvaluationReport) -> Result<Dataset> {
    let load = data::load_csv(path, &CsvOptions::default())
        .with_context(|| format!("reading {}", path.display()))?;
    for w in load.warnings {
        report.warn(w);
    }
    Ok(load.dataset)
}

fn load_model(path: Option<&PathBuf>) -> Result<Model> {
    let path = path.ok_or_else(|| UsageError("--model is required".into()))?;
    Ok(Model::load(path).with_context(|| format!("loading {}", path.display()))?)
}

fn innermost<'a>(matches: &'a ArgMatches) -> &'a ArgMatches {
    let mut m = matches;
    while let Some((_, sub)) = m.subcommand() {
        m = sub;
    }
    m
}

fn merge_args<A: serde::Serialize + serde::de::DeserializeOwned>(
    args: &A,
    matches: &ArgMatches,
    file: &Map<String, Value>,
    section: &str,
) -> Result<(A, Value)> {
    config::merge(args, matches, file.get(section), section)
}

pub fn run(cli: Cli, matches: &ArgMatches) -> Result<()> {
    let leaf = innermost(matches);
    let section = cli.command.section();
    let file = match &cli.global.config {
        Some(p) => config::load(p)?,
        None => Map::new(),
    };
    for k in file.keys() {
        if k != "seed" && k != "input" && !SECTIONS.contains(&k.as_str()) {
            return Err(UsageError(format!("unknown config key {k:?}")).into());
        }
    }
    let mut global = cli.global.clone();
    if leaf.value_source("seed") != Some(ValueSource::CommandLine) {
        if let Some(v) = file.get("seed") {
            global.seed = serde_json::from_value(v.clone())
                .map_err(|e| UsageError(format!("config seed: {e}")))?;
        }
    }
    if leaf.value_source("input") != Some(ValueSource::CommandLine) {
        if let Some(v) = file.get("input") {
            global.input = serde_json::from_value(v.clone())
                .map_err(|e| UsageError(format!("config input: {e}")))?;
        }
    }
    std::fs::create_dir_all(&global.out).map_err(|source| clinaudit::AuditError::Io {
        path: global.out.clone(),
        source,
    })?;
    let ctx = Ctx {
        seed: global.seed,
        input: global.input.clone(),
        out: global.out.clone(),
    };
    let echo = |args: Value| -> Value {
        let Global { seed, input, .. } = &global;
        json!({ "seed": seed, "input": input, section: args })
    };

    let report = match &cli.command {
        Command::Validate(a) => {
            let (a, v) = merge_args(a, leaf, &file, section)?;
            validate(&ctx, &a, echo(v))?
        }
        Command::Calibrate(a) => {
            let (a, v) = merge_args(a, leaf, &file, section)?;
            calibrate(&ctx, &a, echo(v))?
        }
        Command::Dca(a) => {
            let (a, v) = merge_args(a, leaf, &file, section)?;
            dca(&ctx, &a, echo(v))?
        }
        Command::Fairness(a) => {
            let (a, v) = merge_args(a, leaf, &file, section)?;
            fairness(&ctx, &a, echo(v))?
        }
        Command::Explain(a) => {
            let (a, v) = merge_args(a, leaf, &file, section)?;
            explain(&ctx, &a, echo(v))?
        }
        Command::Train(a) => {
            let (a, v) = merge_args(a, leaf, &file, section)?;
            train(&ctx, &a, echo(v))?
        }
        Command::Fedsim(a) => {
            let (a, v) = merge_args(a, leaf, &file, section)?;
            fedsim(&ctx, &a, echo(v))?
        }
        Command::Attack(AttackCommand::Mia(a)) => {
            let (a, v) = merge_args(a, leaf, &file, section)?;
            mia(&ctx, &a, echo(v))?
        }
        Command::Attack(AttackCommand::Fgsm(a)) => {
            let (a, v) = merge_args(a, leaf, &file, section)?;
            let attack = EvasionAttack::Fgsm { eps: a.evasion.eps };
            evasion(&ctx, &a.evasion, attack, "attack-fgsm", echo(v))?
        }
        Command::Attack(AttackCommand::Pgd(a)) => {
            let (a, v) = merge_args(a, leaf, &file, section)?;
            let attack = EvasionAttack::Pgd {
                eps: a.evasion.eps,
                alpha: a.alpha,
                iters: a.iters,
            };
            evasion(&ctx, &a.evasion, attack, "attack-pgd", echo(v))?
        }
        Command::Attack(AttackCommand::Zoo(a)) => {
            let (a, v) = merge_args(a, leaf, &file, section)?;
            zoo(&ctx, &a, echo(v))?
        }
        Command::Report(a) => {
            let (a, _) = merge_args(a, leaf, &file, section)?;
            merge_reports(&a)?
        }
    };
    let mut report = report;
    report.stamp();
    let path = ctx.out.join(format!("{section}.json"));
    report.save(&path)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    info!("wrote {}", path.display());
    println!("{}", path.display());
    Ok(())
}

fn parse_metrics(names: &[String]) -> Result<Vec<Metric>> {
    names
        .iter()
        .map(|n| {
            n.parse::<Metric>()
                .map_err(|_| UsageError(format!("unknown metric {n:?}")).into())
        })
        .collect()
}

fn metric_scalars(
    report: &mut EvaluationReport,
    metrics: &[Metric],
    values: &[Option<f64>],
    suffix: &str,
) {
    for (m, v) in metrics.iter().zip(values) {
        report.scalar_opt(format!("{}{suffix}", m.name()), *v);
    }
}

fn validate(ctx: &Ctx, a: &ValidateArgs, config: Value) -> Result<EvaluationReport> {
    let mut report = EvaluationReport::new("validate", config, ctx.seed);
    let ds = ctx.dataset(&mut report)?;
    let metrics = parse_metrics(&a.metrics)?;
    report.scalar("n", ds.n() as f64);
    report.scalar("prevalence", ds.prevalence());

    if let Some(path) = &a.model {
        let model = load_model(Some(path))?;
        let ext = validation::evaluate_external(&model, &ds, &metrics)?;
        metric_scalars(&mut report, &ext.metrics, &ext.values, "");
        if let Some(fit) = ext.calibration {
            report.scalar("calibration_alpha", fit.alpha);
            report.scalar("calibration_beta", fit.beta);
        }
        for w in ext.warnings {
            report.warn(w);
        }
        report.table("external", &json!({ "mode": "external", "model": path }))?;
        return Ok(report);
    }

    let arch = a.model_args.architecture();
    let cfg = a.model_args.train_config(ctx.seed);
    if let Some(fraction) = a.holdout {
        let (train_ds, test_ds) = data::split_holdout(&ds, fraction, a.stratified, ctx.seed)?;
        let model = models::train(&train_ds, &arch, &cfg)?;
        let preds = PredictionSet::from_model(&model, &test_ds)?;
        let values: Vec<Option<f64>> = metrics.iter().map(|m| m.evaluate(&preds)).collect();
        metric_scalars(&mut report, &metrics, &values, "");
        report.scalar("n_train", train_ds.n() as f64);
        report.scalar("n_test", test_ds.n() as f64);
        report.scalar(
            "holdout_error_bound",
            holdout_error_bound(test_ds.n(), a.delta)?,
        );
        return Ok(report);
    }

    let mode = if a.loocv {
        FoldMode::Loocv
    } else if a.stratified {
        FoldMode::Stratified
    } else {
        FoldMode::Plain
    };
    let cv = if a.nested_grid.is_empty() {
        validation::repeated_cross_validate(
            &ds, &arch, &cfg, a.k, mode, a.repeats, ctx.seed, &metrics,
        )?
    } else {
        let outer = data::make_folds(&ds, a.k, mode, ctx.seed)?;
        let inner_mode = if a.stratified {
            FoldMode::Stratified
        } else {
            FoldMode::Plain
        };
        let nested = validation::nested_cross_validate(
            &ds,
            &arch,
            &a.nested_grid,
            &outer,
            a.inner_k,
            inner_mode,
            &cfg,
            &metrics,
            None,
        )?;
        report.table(
            "nested",
            &json!({
                "grid": nested.grid,
                "chosen_weight_decay": nested.chosen,
                "inner_log_loss": nested.inner_loss,
            }),
        )?;
        nested.cv
    };
    metric_scalars(&mut report, &cv.metrics, &cv.mean, "_mean");
    metric_scalars(&mut report, &cv.metrics, &cv.sd, "_sd");
    for (r, auc) in cv.pooled_auc.iter().enumerate() {
        let name = if r == 0 {
            "pooled_auc".to_string()
        } else {
            format!("pooled_auc_{r}")
        };
        report.scalar_opt(name, *auc);
    }
    let metric_names: Vec<&str> = cv.metrics.iter().map(|m| m.name()).collect();
    report.table("metrics", &metric_names)?;
    report.table("folds", &cv.folds)?;
    Ok(report)
}

fn calibrate(ctx: &Ctx, a: &CalibrateArgs, config: Value) -> Result<EvaluationReport> {
    let mut report = EvaluationReport::new("calibrate", config, ctx.seed);
    let preds = ctx.predictions()?.predictions;
    let cal = calibration_report(&preds, a.bins, a.binning.into())?;
    report.scalar("n", preds.len() as f64);
    report.scalar("events", preds.positives() as f64);
    report.scalar("ece", cal.ece);
    report.scalar_opt("alpha", cal.alpha);
    report.scalar_opt("beta", cal.beta);
    for w in &cal.warnings {
        report.warn(w.clone());
    }
    export::write_calibration_curve(&cal.bins, ctx.create("calibration_curve.csv")?)?;
    report.curve("calibration_curve", "calibration_curve.csv");
    Ok(report)
}

fn dca(ctx: &Ctx, a: &DcaArgs, config: Value) -> Result<EvaluationReport> {
    let mut report = EvaluationReport::new("dca", config, ctx.seed);
    let table = ctx.predictions()?;
    let grid: Vec<f64> = ThresholdGrid {
        start: a.grid_start,
        stop: a.grid_stop,
        step: a.grid_step,
    }
    .thresholds()?;
    let curve = decision_curve(&table.predictions, &grid, &table.binary_tests)?;
    report.scalar("n", table.predictions.len() as f64);
    report.scalar("prevalence", table.predictions.prevalence());
    let above = curve
        .nb_model
        .iter()
        .zip(&curve.nb_treat_all)
        .filter(|(m, all)| *m > *all && **m > 0.0)
        .count();
    report.scalar("thresholds_model_beats_defaults", above as f64);
    export::write_decision_curve(&curve, ctx.create("decision_curve.csv")?)?;
    report.curve("decision_curve", "decision_curve.csv");
    Ok(report)
}

fn fairness(ctx: &Ctx, a: &FairnessArgs, config: Value) -> Result<EvaluationReport> {
    let mut report = EvaluationReport::new("fairness", config, ctx.seed);
    let preds = ctx.predictions()?.predictions;
    let fr = fairness_report(&preds, a.threshold, a.bins, a.binning.into())?;
    report.scalar("statistical_parity_difference", fr.spd);
    report.scalar("independence_gap", fr.criteria.independence_gap);
    report.scalar("separation_gap", fr.criteria.separation_gap);
    report.scalar_opt("tpr_gap", fr.criteria.tpr_gap);
    report.scalar_opt("fpr_gap", fr.criteria.fpr_gap);
    report.scalar("sufficiency_gap", fr.criteria.sufficiency_gap);
    for w in &fr.criteria.undefined {
        report.warn(w.clone());
    }
    for (g, cal) in &fr.calibration {
        report.scalar(format!("group_{g}_ece"), cal.ece);
        report.scalar_opt(format!("group_{g}_alpha"), cal.alpha);
        report.scalar_opt(format!("group_{g}_beta"), cal.beta);
        for w in &cal.warnings {
            report.warn(format!("group {g}: {w}"));
        }
    }
    report.table("groups", &fr.groups)?;
    Ok(report)
}

fn explain(ctx: &Ctx, a: &ExplainArgs, config: Value) -> Result<EvaluationReport> {
    let mut report = EvaluationReport::new("explain", config, ctx.seed);
    let ds = ctx.dataset(&mut report)?;
    let model = load_model(a.model.as_ref())?;
    let attribution = match a.method {
        ExplainMethod::Permutation => {
            let metric = match a.metric {
                ImportanceKind::Auc => ImportanceMetric::Auc,
                ImportanceKind::Accuracy => ImportanceMetric::Accuracy,
                ImportanceKind::NegLogLoss => ImportanceMetric::NegLogLoss,
            };
            explain::permutation_importance(&model, &ds, metric, a.repeats, ctx.seed)?
        }
        ExplainMethod::Shapley => {
            if a.row >= ds.n() {
                return Err(UsageError(format!(
                    "--row {} out of range for {} rows",
                    a.row,
                    ds.n()
                ))
                .into());
            }
            let bg_rows: Vec<usize> = (0..a.background.clamp(1, ds.n())).collect();
            let background = ds.subset(&bg_rows);
            let x = ds.row(a.row);
            let attr = explain::shapley_exact(&model, x, &background)?;
            let v = explain::coalition_values(&model, x, &background)?;
            report.scalar("prediction", model.predict(x));
            report.scalar("base_value", v[0]);
            report.scalar(
                "efficiency_gap",
                (attr.values.iter().sum::<f64>() - (v[v.len() - 1] - v[0])).abs(),
            );
            attr
        }
        ExplainMethod::Surrogate => {
            let tree = explain::fit_surrogate_tree(&model, &ds, a.max_depth, a.min_leaf)?;
            let sr = explain::surrogate_report(&model, &tree, &ds)?;
            report.scalar("fidelity", sr.fidelity);
            report.scalar("leaves", sr.parsimony as f64);
            report.scalar("depth", sr.depth as f64);
            tree.save(ctx.out.join("surrogate_model.json"))?;
            report.table(
                "artifacts",
                &json!({ "surrogate_model": "surrogate_model.json" }),
            )?;
            return Ok(report);
        }
    };
    for (name, v) in attribution.feature_names.iter().zip(&attribution.values) {
        report.scalar(format!("attribution/{name}"), *v);
    }
    export::write_attribution(&attribution, ctx.create("attribution.csv")?)?;
    report.curve("attribution", "attribution.csv");
    Ok(report)
}

fn train(ctx: &Ctx, a: &TrainArgs, config: Value) -> Result<EvaluationReport> {
    let mut report = EvaluationReport::new("train", config, ctx.seed);
    let ds = ctx.dataset(&mut report)?;
    let arch = a.model_args.architecture();
    let cfg = a.model_args.train_config(ctx.seed);
    let mut artifacts = Map::new();
    let model = match a.dp_args.spec() {
        Some(spec) => {
            if !arch.is_dense() {
                return Err(UsageError("--dp needs --arch logistic or mlp".into()).into());
            }
            let out = privacy::dp_sgd_train(&ds, &arch, &cfg, &spec)?;
            write_audit_log(&out.audit, ctx.create("dp_audit.jsonl")?)?;
            artifacts.insert("audit_log".into(), "dp_audit.jsonl".into());
            report.scalar("steps", out.audit.len() as f64);
            report.scalar("noise_scale", spec.noise_multiplier * spec.clip_norm);
            let max_clipped = out
                .audit
                .iter()
                .map(|r| r.max_clipped_norm)
                .fold(0.0, f64::max);
            report.scalar("max_clipped_norm", max_clipped);
            report.warn(
                "no privacy accountant: the (epsilon, delta) spent by DP-SGD is not reported",
            );
            out.model
        }
        None => models::train(&ds, &arch, &cfg)?,
    };
    report.scalar("train_accuracy", models::accuracy(&model, &ds));
    if arch.is_dense() {
        report.scalar("train_log_loss", models::dataset_log_loss(&model, &ds)?);
    }
    report.scalar("complexity", model.complexity() as f64);
    model.save(ctx.out.join("model.json"))?;
    artifacts.insert("model".into(), "model.json".into());
    report.table("artifacts", &artifacts)?;
    Ok(report)
}

fn fedsim(ctx: &Ctx, a: &FedsimArgs, mut config: Value) -> Result<EvaluationReport> {
    let path = a
        .scenario
        .as_ref()
        .ok_or_else(|| UsageError("--scenario is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read scenario {}: {e}", path.display())))?;
    let fed: FederationConfig =
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    config["scenario_contents"] = serde_json::to_value(&fed)?;
    let mut report = EvaluationReport::new("fedsim", config, ctx.seed);
    let pool = ctx.dataset(&mut report)?;
    let test = match &a.test {
        Some(p) => Some(load_dataset(p, &mut report)?),
        None => None,
    };
    let arch = a.model_args.architecture();
    if !arch.is_dense() {
        return Err(UsageError("fedsim needs --arch logistic or mlp".into()).into());
    }
    let out = federated::fedavg_run(
        &pool,
        &fed,
        &arch,
        &a.model_args.train_config(ctx.seed),
        test.as_ref(),
    )?;
    federated::write_round_log(&out.rounds, ctx.create("rounds.jsonl")?)?;
    out.model.save(ctx.out.join("model.json"))?;
    report.scalar("rounds", out.rounds.len() as f64);
    let skipped: usize = out.rounds.iter().map(|r| r.skipped.len()).sum();
    report.scalar("skipped_client_updates", skipped as f64);
    if skipped > 0 {
        report.warn(format!(
            "{skipped} client updates skipped (single-class local data)"
        ));
    }
    if let Some(last) = out.rounds.last().and_then(|r| r.eval.as_ref()) {
        report.scalar("final_accuracy", last.accuracy);
        report.scalar("final_log_loss", last.log_loss);
        report.scalar_opt("final_auc", last.auc);
    }
    report.scalar("train_accuracy", models::accuracy(&out.model, &pool));
    report.table(
        "artifacts",
        &json!({ "model": "model.json", "round_log": "rounds.jsonl" }),
    )?;
    report.table(
        "checksums",
        &out.rounds
            .iter()
            .map(|r| r.checksum.clone())
            .collect::<Vec<_>>(),
    )?;
    Ok(report)
}

fn mia(ctx: &Ctx, a: &MiaArgs, config: Value) -> Result<EvaluationReport> {
    let mut report = EvaluationReport::new("attack-mia", config, ctx.seed);
    let pool = ctx.dataset(&mut report)?;
    let arch = a.model_args.architecture();
    let cfg = a.model_args.train_config(ctx.seed);
    let split = MiaSplit::plan(pool.n(), a.target_size, a.eval_size, ctx.seed)?;
    let target_ds = pool.subset(&split.target_train);
    let target = match a.dp_args.spec() {
        Some(spec) => privacy::dp_sgd_train(&target_ds, &arch, &cfg, &spec)?.model,
        None => models::train(&target_ds, &arch, &cfg)?,
    };
    let setup = MiaSetup {
        shadow_count: a.shadows,
        shadow_arch: arch.clone(),
        shadow_train: cfg.clone(),
        features: match a.features {
            FeatureKind::Confidence => AttackFeatures::Confidence,
            FeatureKind::Loss => AttackFeatures::Loss,
            FeatureKind::ConfidenceAndLoss => AttackFeatures::ConfidenceAndLoss,
        },
        seed: ctx.seed,
    };
    let result = attacks::mia_shadow_attack(&target, &pool, &split, &setup)?;
    report.scalar("mia_auc", result.auc);
    report.scalar("mia_advantage", result.advantage);
    report.scalar(
        "target_train_accuracy",
        models::accuracy(&target, &target_ds),
    );
    report.scalar(
        "non_member_accuracy",
        models::accuracy(&target, &pool.subset(&split.non_members)),
    );
    report.scalar("members", split.members.len() as f64);
    report.scalar("non_members", split.non_members.len() as f64);
    report.scalar("shadow_pool", split.shadow_pool.len() as f64);
    Ok(report)
}

fn evasion(
    ctx: &Ctx,
    a: &EvasionArgs,
    attack: EvasionAttack,
    name: &str,
    config: Value,
) -> Result<EvaluationReport> {
    let mut report = EvaluationReport::new(name, config, ctx.seed);
    let ds = ctx.dataset(&mut report)?;
    let model = load_model(a.model.as_ref())?;
    let bounds = if a.unbounded {
        DomainBounds::unbounded(ds.d())
    } else {
        DomainBounds::from_dataset(&ds)
    };
    let result = attacks::run_evasion(&model, &ds, &attack, &bounds)?;
    report.scalar("eps", attack.eps());
    report.scalar("success_rate", result.success_rate);
    report.scalar("max_linf", result.max_linf);
    report.scalar("clean_accuracy", models::accuracy(&model, &ds));
    let adv = Dataset::from_rows(&result.adversarial, ds.labels().to_vec(), None)?;
    report.scalar("adversarial_accuracy", models::accuracy(&model, &adv));
    export::write_adversarial(
        ds.feature_names(),
        ds.labels(),
        &result.adversarial,
        &result.flipped,
        ctx.create("adversarial.csv")?,
    )?;
    report.curve("adversarial", "adversarial.csv");
    Ok(report)
}

fn zoo(ctx: &Ctx, a: &ZooArgs, config: Value) -> Result<EvaluationReport> {
    let mut report = EvaluationReport::new("attack-zoo", config, ctx.seed);
    let ds = ctx.dataset(&mut report)?;
    let model = load_model(a.model.as_ref())?;
    let rows = a.rows.min(ds.n());
    let mut queries = 0;
    let mut max_err: Option<f64> = None;
    let mut estimates = Vec::with_capacity(rows);
    for i in 0..rows {
        let x = ds.row(i);
        let est = attacks::zoo_gradient(&model, x, a.h)?;
        queries += est.queries;
        for w in &est.warnings {
            report.warn(format!("row {i}: {w}"));
        }
        if model.architecture.is_dense() {
            // d p / d x = (1 - p) * d loss(y = 0) / d x
            let p = model.predict(x);
            let g0 = model.input_gradient(x, 0)?;
            let err = est
                .gradient
                .iter()
                .zip(&g0)
                .map(|(e, g)| (e - (1.0 - p) * g).abs())
                .fold(0.0, f64::max);
            max_err = Some(max_err.map_or(err, |m: f64| m.max(err)));
        }
        estimates.push(est.gradient);
    }
    report.scalar("rows", rows as f64);
    report.scalar("queries", queries as f64);
    report.scalar_opt("max_abs_error_vs_analytic", max_err);
    report.table("gradients", &estimates)?;
    Ok(report)
}

fn merge_reports(a: &ReportArgs) -> Result<EvaluationReport> {
    let reports = a
        .reports
        .iter()
        .map(|p| EvaluationReport::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok(merge(&reports)?)
}
