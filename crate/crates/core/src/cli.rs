//! Command-line workflows: synthesize, featurize, split, train, evaluate,
//! predict-curve, report and selftest.
//!
//! Exit codes are 0 on success, 1 on runtime failure and 2 on
//! configuration or validation errors.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, CurveSplit, DatasetError, SNCurve};
use crate::evaluation::{self, curve_grid, predict_eval_set, EvalError, SeedOutcome};
use crate::features::{self, FeatureError, LogBase, CHECK_FEATURES_TOL};
use crate::model::{ModelDims, ModelError, TrainedModel, Variant};
use crate::selftest;
use crate::synthgen::{self, SynthError};
use crate::training::{self, Experiment, LossConfig, RepetitionConfig, TrainConfig, TrainError};

pub const CONFIG_ECHO: &str = "config.toml";
pub const SPLIT_FILE: &str = "split.json";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config files or input data.
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::Checkpoint(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Argument(_) | TrainError::Feature(_) => CliError::Config(e.to_string()),
            TrainError::Dataset(d) => d.into(),
            TrainError::Model(m) => m.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Argument(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn parse_log_base(s: &str) -> Result<LogBase, String> {
    match s {
        "ten" | "10" => Ok(LogBase::Ten),
        "natural" | "e" => Ok(LogBase::Natural),
        _ => Err(format!("unknown log base `{s}` (expected `ten` or `natural`)")),
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: ModelError| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    /// Split manifest to reuse; takes precedence over the fields below.
    pub split_manifest: Option<PathBuf>,
    /// Explicit test curve ids; used instead of a seeded draw when set.
    pub test_ids: Option<Vec<u32>>,
    pub n_test: usize,
    pub split_seed: u64,
    pub log_base: LogBase,
    /// Extra evenly spaced σ_a points per exported test curve.
    pub dense_points: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            split_manifest: None,
            test_ids: None,
            n_test: 7,
            split_seed: 2,
            log_base: LogBase::Ten,
            dense_points: evaluation::DEFAULT_DENSE_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub dims: ModelDims,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            dims: ModelDims::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Everything a `train` run depends on. Loaded from TOML, then patched by
/// `--set key.path=value` pairs, then by the named flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    /// Defaults to the variant's own loss when absent.
    pub loss: Option<LossConfig>,
    pub train: TrainConfig,
    pub repetitions: RepetitionConfig,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("cannot serialize config: {e}")))
    }

    /// Sets one dotted key, e.g. `model.dims.attention.n_heads=4`. The value
    /// is read as a TOML literal and falls back to a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{assignment}`")))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(&*self).map_err(|e| CliError::Runtime(e.to_string()))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        let mut node = &mut root;
        for part in &parts[..parts.len() - 1] {
            let table = node
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("`{key}` is not a config key")))?;
            node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        node.as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{key}` is not a config key")))?
            .insert(parts[parts.len() - 1].to_string(), value);
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("--set {assignment}: {e}")))?;
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        self.loss.unwrap_or_else(|| LossConfig::for_variant(self.model.variant))
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            variant: self.model.variant,
            dims: self.model.dims.clone(),
            loss: self.loss(),
            train: self.train.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.data.path.is_none() {
            return Err(CliError::Config("no dataset given (use --data or data.path)".into()));
        }
        if self.output.dir.is_none() {
            return Err(CliError::Config("no output directory given (use --out or output.dir)".into()));
        }
        self.model.dims.validate()?;
        self.loss().validate()?;
        self.train.validate()?;
        self.repetitions.validate()?;
        Ok(())
    }

    /// Split from the manifest, explicit ids, or a seeded draw, in that order.
    pub fn resolve_split(&self, curves: &[SNCurve]) -> Result<CurveSplit, CliError> {
        let split = if let Some(path) = &self.data.split_manifest {
            CurveSplit::load(path)?
        } else if let Some(ids) = &self.data.test_ids {
            dataset::split_explicit(curves, ids)?
        } else {
            dataset::split_curves(curves, self.data.n_test, self.data.split_seed)?
        };
        split.validate_against(curves)?;
        Ok(split)
    }
}

#[derive(Debug, Parser)]
#[command(name = "deepoformer", version, about = "S-N fatigue life prediction with a Transformer-branch operator network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic Basquin dataset.
    Synth(SynthArgs),
    /// Fill the derived feature columns of a dataset.
    Featurize(FeaturizeArgs),
    /// Write a curve-level train/test split manifest.
    Split(SplitArgs),
    /// Train repeated models and export per-seed checkpoints and metrics.
    Train(TrainArgs),
    /// Re-evaluate the checkpoints of a training run.
    Evaluate(EvaluateArgs),
    /// Predict logN along a stress grid for one curve's material.
    PredictCurve(PredictCurveArgs),
    /// Print a variant × metric table from evaluated runs.
    Report(ReportArgs),
    /// Gradient checks, metric oracles and feature checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = synthgen::FIXTURE_CURVES)]
    pub curves: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = synthgen::FIXTURE_NOISE_STD)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Compare populated feature columns with recomputed values.
    #[arg(long)]
    pub check_features: bool,
    #[arg(long, default_value = "ten", value_parser = parse_log_base)]
    pub log_base: LogBase,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated test curve ids; overrides the seeded draw.
    #[arg(long, value_delimiter = ',')]
    pub test_ids: Option<Vec<u32>>,
    /// Manifest path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override, e.g. `model.dims.p=8`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub test_ids: Option<Vec<u32>>,
    #[arg(long, value_parser = parse_log_base)]
    pub log_base: Option<LogBase>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub base_seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for s in &self.sets {
            cfg.set(s)?;
        }
        macro_rules! apply {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { cfg.$($field).+ = v.clone().into(); })*
            };
        }
        apply!(
            data => data.path,
            split => data.split_manifest,
            n_test => data.n_test,
            split_seed => data.split_seed,
            test_ids => data.test_ids,
            log_base => data.log_base,
            variant => model.variant,
            epochs => train.epochs,
            lr => train.lr,
            batch_size => train.batch_size,
            reps => repetitions.n_repetitions,
            base_seed => repetitions.base_seed,
            workers => repetitions.workers,
            out => output.dir,
        );
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Dataset to evaluate on; defaults to the one in the run's config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictCurveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub curve_id: u32,
    /// Comma-separated σ_a values in MPa; defaults to the curve's observed
    /// points plus an evenly spaced grid over their range.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    #[arg(long, default_value_t = evaluation::DEFAULT_DENSE_POINTS)]
    pub points: usize,
    /// CSV path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run or evaluation directories containing summary.json.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Restrict to `gradients`, `metrics` or `features`; repeatable.
    #[arg(long = "suite")]
    pub suites: Vec<String>,
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed_{seed}"))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Featurize(a) => featurize(&a),
        Command::Split(a) => split(&a),
        Command::Train(a) => train(&a.resolve()?),
        Command::Evaluate(a) => evaluate(&a),
        Command::PredictCurve(a) => predict_curve(&a),
        Command::Report(a) => report(&a),
        Command::Selftest(a) => run_selftest(&a),
    }
}

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(CliError::Config(format!("--noise must be a finite value >= 0, got {}", a.noise)));
    }
    let curves = synthgen::synthesize(a.curves, a.noise, a.seed)?;
    dataset::save_dataset(&a.out, &curves, None)?;
    info!("wrote {} curves to {}", curves.len(), a.out.display());
    Ok(())
}

fn featurize(a: &FeaturizeArgs) -> Result<(), CliError> {
    let rows = dataset::load_rows(&a.data)?;
    if a.check_features {
        let mismatches = features::check_file_features(&rows, a.log_base, CHECK_FEATURES_TOL)?;
        if !mismatches.is_empty() {
            for m in &mismatches {
                eprintln!(
                    "line {}: {} is {} in the file, recomputed {}",
                    m.line, m.column, m.file_value, m.computed
                );
            }
            return Err(CliError::Config(format!("{} feature values disagree with the file", mismatches.len())));
        }
    }
    for row in &rows {
        features::make_trunk_features(&row.record, a.log_base).map_err(|e| CliError::Config(format!("line {}: {e}", row.line)))?;
    }
    let curves = dataset::group_rows(&rows)?;
    let derived = curves
        .iter()
        .flat_map(|c| &c.records)
        .map(|r| features::make_trunk_features(r, a.log_base).map(|f| f.derived_columns()))
        .collect::<Result<Vec<_>, _>>()?;
    dataset::save_dataset(&a.out, &curves, Some(&derived))?;
    Ok(())
}

fn split(a: &SplitArgs) -> Result<(), CliError> {
    let curves = dataset::load_dataset(&a.data)?;
    let split = match &a.test_ids {
        Some(ids) => dataset::split_explicit(&curves, ids)?,
        None => dataset::split_curves(&curves, a.n_test, a.seed)?,
    };
    match &a.out {
        Some(path) => split.save(path)?,
        None => println!("{}", split.to_json()?),
    }
    info!(
        "{} train / {} test curves",
        split.train_curve_ids.len(),
        split.test_curve_ids.len()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let data_path = cfg.data.path.as_deref().expect("validated");
    let out = cfg.output.dir.as_deref().expect("validated");
    let curves = dataset::load_dataset(data_path)?;
    let split = cfg.resolve_split(&curves)?;
    let prepared = training::prepare(&curves, &split, cfg.data.log_base, cfg.data.dense_points)?;
    fs::create_dir_all(out).map_err(io_at(out))?;
    // The echo pins the split so a rerun from it reproduces this one.
    let mut echo = cfg.clone();
    echo.data.split_manifest = None;
    echo.data.test_ids = Some(split.test_curve_ids.iter().copied().collect());
    let echo_text = echo.to_toml()?;
    fs::write(out.join(CONFIG_ECHO), &echo_text).map_err(io_at(out))?;
    split.save(out.join(SPLIT_FILE))?;

    let harness = training::run_repetitions(&prepared, &cfg.experiment(), &cfg.repetitions, &echo_text)?;
    for run in &harness.runs {
        let dir = seed_dir(out, run.seed);
        fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        if let Some(model) = &run.model {
            model.save(dir.join("checkpoint.json"))?;
        }
        fs::write(dir.join("loss.csv"), training::loss_csv(&run.loss_trace, cfg.train.log_every)).map_err(io_at(&dir))?;
        if let Err(e) = &run.outcome.result {
            warn!("seed {} failed: {e}", run.seed);
        }
    }
    evaluation::export_report(&harness.report, out)?;
    print_summary(&harness.report);
    Ok(())
}

fn print_summary(r: &evaluation::RunReport) {
    println!(
        "{}: {} of {} repetitions; R2 {:.4} ± {:.4}, MAE {:.4} ± {:.4}, MRE {:.4} ± {:.4}, ±2σ coverage {:.2}",
        r.variant,
        r.completed,
        r.completed + r.failed,
        r.mean.r2,
        r.std.r2,
        r.mean.mae,
        r.std.mae,
        r.mean.mre,
        r.std.mre,
        r.coverage
    );
}

fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&a.run_dir.join(CONFIG_ECHO))?;
    if let Some(d) = &a.data {
        cfg.data.path = Some(d.clone());
    }
    let data_path = cfg
        .data
        .path
        .clone()
        .ok_or_else(|| CliError::Config("no dataset given (use --data)".into()))?;
    let curves = dataset::load_dataset(&data_path)?;
    let split = CurveSplit::load(a.run_dir.join(SPLIT_FILE))?;
    split.validate_against(&curves)?;
    let test: Vec<&SNCurve> = split.test_curves(&curves);
    let set = evaluation::EvalSet::new(&test, cfg.data.dense_points);
    let outcomes: Vec<SeedOutcome> = cfg
        .repetitions
        .seeds()
        .into_iter()
        .map(|seed| {
            let path = seed_dir(&a.run_dir, seed).join("checkpoint.json");
            let result = TrainedModel::load(&path)
                .map_err(|e| format!("{}: {e}", path.display()))
                .and_then(|m| predict_eval_set(&m, &set).map_err(|e| e.to_string()));
            SeedOutcome { seed, result }
        })
        .collect();
    let text = fs::read_to_string(a.run_dir.join(CONFIG_ECHO)).map_err(io_at(&a.run_dir))?;
    let report = evaluation::aggregate(cfg.model.variant.as_str(), &text, &set, &outcomes)?;
    let out = a.out.as_deref().unwrap_or(&a.run_dir);
    fs::create_dir_all(out).map_err(io_at(out))?;
    evaluation::export_report(&report, out)?;
    print_summary(&report);
    Ok(())
}

fn predict_curve(a: &PredictCurveArgs) -> Result<(), CliError> {
    let model = TrainedModel::load(&a.checkpoint)?;
    let curves = dataset::load_dataset(&a.data)?;
    let curve = curves
        .iter()
        .find(|c| c.curve_id == a.curve_id)
        .ok_or_else(|| CliError::Config(format!("curve {} not in {}", a.curve_id, a.data.display())))?;
    let grid = curve_grid(curve, a.points);
    let (sigmas, truth): (Vec<f64>, Vec<Option<f64>>) = match &a.sigma {
        Some(s) => (s.clone(), s.iter().map(|x| grid_truth(&grid, *x)).collect()),
        None => (grid.sigma_a.clone(), grid.true_log_n.clone()),
    };
    let preds = model.predict_curve(curve.material(), &sigmas)?;
    let mut text = String::from("sigma_a,pred_logN,true_logN\n");
    for (sigma, pred) in preds {
        let t = grid_truth(&grid, sigma).or_else(|| sigmas.iter().position(|s| *s == sigma).and_then(|i| truth[i]));
        text.push_str(&format!("{sigma},{pred},{}\n", t.map(|v| v.to_string()).unwrap_or_default()));
    }
    match &a.out {
        Some(path) => fs::write(path, text).map_err(io_at(path))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn grid_truth(grid: &evaluation::CurveGrid, sigma: f64) -> Option<f64> {
    grid.sigma_a.iter().position(|s| *s == sigma).and_then(|i| grid.true_log_n[i])
}

fn report(a: &ReportArgs) -> Result<(), CliError> {
    let reports = a
        .runs
        .iter()
        .map(|dir| {
            let path = if dir.is_dir() { dir.join(SUMMARY_FILE) } else { dir.clone() };
            evaluation::load_summary(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let table = evaluation::comparison_table(&reports);
    print!("{table}");
    if let Some(path) = &a.out {
        fs::write(path, &table).map_err(io_at(path))?;
    }
    Ok(())
}

fn run_selftest(a: &SelftestArgs) -> Result<(), CliError> {
    let suites = if a.suites.is_empty() {
        vec![selftest::Suite::Gradients, selftest::Suite::Metrics, selftest::Suite::Features]
    } else {
        a.suites
            .iter()
            .map(|s| match s.as_str() {
                "gradients" => Ok(selftest::Suite::Gradients),
                "metrics" => Ok(selftest::Suite::Metrics),
                "features" => Ok(selftest::Suite::Features),
                _ => Err(CliError::Config(format!("unknown suite `{s}`"))),
            })
            .collect::<Result<_, _>>()?
    };
    let results = selftest::run(&suites);
    for r in &results {
        println!("{}", r.line());
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {} failed", results.len(), failed);
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} self-checks failed")));
    }
    Ok(())
}
