//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or runtime error. Progress
//! goes to stderr; every artifact goes to a file together with a manifest.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use stepimpute_core::baselines::iterative::IterativeConfig;
use stepimpute_core::baselines::regression::RegressionConfig;
use stepimpute_core::eval::{
    self, acf, build_report, participant_missing_bins, run_method, stratified_split, EvalTask, MethodConfig,
    MethodSpec, StratifiedSplit, DEFAULT_PROPORTIONS,
};
use stepimpute_core::ingest::{align_day_shift, daily_step_profile, generate_synthetic_cohort, CalendarAnchor, SynthConfig};
use stepimpute_core::model::train::ensemble_predict;
use stepimpute_core::model::{export_attention_maps, fit, AttentionModel, Instance, ParticipantView, TrainConfig};
use stepimpute_core::series::{is_eval_hour, HourMask, ParticipantSeries};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::csvio::{self, PredictionRow};
use crate::error::{Error, Result};
use crate::fs::{atomic_write, read_to_string};
use crate::manifest::{manifest_path, RunManifest};
use crate::report;
use crate::stats::paired_t_test;

pub const SEED_ENV: &str = "STEPIMPUTE_SEED";

#[derive(Debug, Parser)]
#[command(name = "stepimpute", version, about = "Impute missing hourly step counts")]
pub struct Cli {
    /// Global seed for every random choice.
    #[arg(long, global = true, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// JSON file of hyperparameters; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with its ground truth.
    Synth(SynthArgs),
    /// Roll minute records up to an hourly cohort.
    Rollup(RollupArgs),
    /// Stratified train/validation/test split.
    Split(SplitArgs),
    /// Train the attention model.
    Train(TrainArgs),
    /// Fill every missing 6:00–22:00 block with one method.
    Impute(ImputeArgs),
    /// Score methods on held-out blocks.
    Evaluate(EvaluateArgs),
    /// Median autocorrelation of step rates.
    Acf(AcfArgs),
    /// Mean attention maps of a trained model.
    AttnExport(AttnExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub participants: usize,
    #[arg(long, default_value_t = 26)]
    pub weeks: usize,
    /// Target fraction of 6:00–22:00 blocks removed in random runs.
    #[arg(long, default_value_t = 0.2)]
    pub missing_rate: f64,
    /// Probability a night is not worn.
    #[arg(long, default_value_t = 0.7)]
    pub overnight_nonwear: f64,
    /// Week-to-week AR(1) coefficient of the activity level.
    #[arg(long, default_value_t = 0.9)]
    pub ar_coefficient: f64,
    /// Observed cohort CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth CSV (default: `<out>` with `.truth.csv`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RollupArgs {
    /// Minute CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Day of week (0–6) of minute 0.
    #[arg(long, default_value_t = 0)]
    pub epoch_day_of_week: u8,
    /// Relabel days of week to best match the first participant.
    #[arg(long)]
    pub align: bool,
}

#[derive(Debug, Args)]
pub struct CohortArg {
    /// Hourly cohort CSV.
    #[arg(long)]
    pub cohort: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub cohort: CohortArg,
    /// Fold index used with `--seed` when no split file is given.
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default, Clone)]
pub struct ModelFlags {
    /// Attention learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Query/key width.
    #[arg(long)]
    pub d_k: Option<usize>,
    /// Attention minibatch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Maximum attention epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Train on a random subset of this many targets per epoch.
    #[arg(long)]
    pub max_instances_per_epoch: Option<usize>,
    /// Regression baseline epochs.
    #[arg(long)]
    pub regression_epochs: Option<usize>,
    /// Regression baseline minibatch size.
    #[arg(long)]
    pub regression_batch_size: Option<usize>,
    /// Regression baseline learning rate.
    #[arg(long)]
    pub regression_lr: Option<f64>,
    /// Chained-equation sweeps.
    #[arg(long)]
    pub iterative_iterations: Option<usize>,
    /// SGD passes per chained-equation sweep.
    #[arg(long)]
    pub iterative_epochs: Option<usize>,
    /// Multiple-imputation draws per target.
    #[arg(long)]
    pub mi_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitSource {
    /// Split CSV; computed from `--fold` and `--seed` when absent.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cohort: CohortArg,
    #[command(flatten)]
    pub split: SplitSource,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Also save the untrained model here.
    #[arg(long)]
    pub save_init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub cohort: CohortArg,
    #[command(flatten)]
    pub split: SplitSource,
    #[command(flatten)]
    pub model_flags: ModelFlags,
    /// Method spec, e.g. `attention` or `median:dw_hd`.
    #[arg(long, default_value = "attention")]
    pub method: String,
    /// Trained attention checkpoint (otherwise trained on the split).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Impute missing blocks at every hour, not just 6:00–22:00.
    #[arg(long)]
    pub all_hours: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub cohort: CohortArg,
    /// Ground-truth CSV; masked blocks are scored as well.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitSource,
    #[command(flatten)]
    pub model_flags: ModelFlags,
    /// Comma-separated methods, e.g. `zero,median:dw_hd,knn:uniform:7,attention`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub methods: Vec<String>,
    /// Attention checkpoint to score instead of training one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Average this many attention models trained from different seeds.
    #[arg(long, default_value_t = 1)]
    pub ensemble: usize,
    /// Method the step-bin ratios and t-tests compare against (default: first).
    #[arg(long)]
    pub reference: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AcfArgs {
    #[command(flatten)]
    pub cohort: CohortArg,
    /// Largest lag in hours.
    #[arg(long, default_value_t = eval::acf::DEFAULT_MAX_LAG)]
    pub max_lag: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttnExportArgs {
    #[command(flatten)]
    pub cohort: CohortArg,
    #[arg(long)]
    pub model: PathBuf,
    /// Restrict to the test blocks of this split (hidden from the model).
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Output directory for `attention_overall.csv` and `attention_dow<d>.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Hyperparameters read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub lr: Option<f64>,
    pub d_k: Option<usize>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub max_instances_per_epoch: Option<usize>,
    pub regression_epochs: Option<usize>,
    pub regression_batch_size: Option<usize>,
    pub regression_lr: Option<f64>,
    pub iterative_iterations: Option<usize>,
    pub iterative_epochs: Option<usize>,
    pub mi_samples: Option<usize>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => serde_json::from_str(&read_to_string(p)?)
                .map_err(|e| Error::Invalid(format!("{}: {e}", p.display()))),
        }
    }
}

fn method_config(flags: &ModelFlags, file: &FileConfig, seed: u64) -> MethodConfig {
    let mut c = MethodConfig::with_seed(seed);
    let a = &mut c.attention;
    a.lr = flags.lr.or(file.lr).unwrap_or(a.lr);
    a.d_k = flags.d_k.or(file.d_k).unwrap_or(a.d_k);
    a.batch_size = flags.batch_size.or(file.batch_size).unwrap_or(a.batch_size);
    a.epochs = flags.epochs.or(file.epochs).unwrap_or(a.epochs);
    a.patience = flags.patience.or(file.patience);
    a.max_instances_per_epoch = flags.max_instances_per_epoch.or(file.max_instances_per_epoch);
    let r: &mut RegressionConfig = &mut c.regression;
    r.epochs = flags.regression_epochs.or(file.regression_epochs).unwrap_or(r.epochs);
    r.batch_size = flags.regression_batch_size.or(file.regression_batch_size).unwrap_or(r.batch_size);
    r.lr = flags.regression_lr.or(file.regression_lr).unwrap_or(r.lr);
    let i: &mut IterativeConfig = &mut c.iterative;
    i.iterations = flags.iterative_iterations.or(file.iterative_iterations).unwrap_or(i.iterations);
    i.epochs = flags.iterative_epochs.or(file.iterative_epochs).unwrap_or(i.epochs);
    c.mi_samples = flags.mi_samples.or(file.mi_samples).unwrap_or(c.mi_samples);
    c
}

fn record_config(m: &mut RunManifest, c: &MethodConfig) {
    let a = &c.attention;
    m.param("lr", a.lr)
        .param("d_k", a.d_k)
        .param("batch_size", a.batch_size)
        .param("epochs", a.epochs)
        .param("patience", a.patience)
        .param("max_instances_per_epoch", a.max_instances_per_epoch)
        .param("chunk_size", a.chunk_size)
        .param("regression_lr", c.regression.lr)
        .param("regression_batch_size", c.regression.batch_size)
        .param("regression_epochs", c.regression.epochs)
        .param("iterative_iterations", c.iterative.iterations)
        .param("iterative_epochs", c.iterative.epochs)
        .param("mi_samples", c.mi_samples);
}

struct Ctx {
    seed: u64,
    config: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, self.seed, self.config.as_deref())
    }
}

fn load_cohort(ctx: &Ctx, path: &Path) -> Result<Vec<ParticipantSeries>> {
    let data = csvio::read_hourly_csv(path)?;
    if data.cohort.is_empty() {
        ctx.log(format!("warning: {} holds no participants", path.display()));
    }
    Ok(data.cohort)
}

fn load_split(ctx: &Ctx, src: &SplitSource, cohort: &[ParticipantSeries]) -> Result<StratifiedSplit> {
    match &src.split {
        Some(p) => csvio::parse_split_csv(p, &read_to_string(p)?, cohort, src.fold, ctx.seed, DEFAULT_PROPORTIONS),
        None => {
            let s = stratified_split(cohort, src.fold, DEFAULT_PROPORTIONS, ctx.seed)?;
            for w in &s.warnings {
                ctx.log(format!("warning: {w}"));
            }
            Ok(s)
        }
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", cli.jobs);
            return 2;
        }
    };
    let ctx = Ctx {
        seed: cli.seed,
        config: cli.config.clone(),
        quiet: cli.quiet,
    };
    match pool.install(|| dispatch(&ctx, &cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(ctx: &Ctx, cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(ctx, a),
        Command::Rollup(a) => rollup(ctx, a),
        Command::Split(a) => split(ctx, a),
        Command::Train(a) => train(ctx, a),
        Command::Impute(a) => impute(ctx, a),
        Command::Evaluate(a) => evaluate(ctx, a),
        Command::Acf(a) => acf_cmd(ctx, a),
        Command::AttnExport(a) => attn_export(ctx, a),
    }
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let t0 = Instant::now();
    let cfg = SynthConfig {
        n_participants: a.participants,
        n_weeks: a.weeks,
        seed: ctx.seed,
        missing_rate: a.missing_rate,
        overnight_nonwear_prob: a.overnight_nonwear,
        ar_coefficient: a.ar_coefficient,
        ..SynthConfig::default()
    };
    let c = generate_synthetic_cohort(&cfg)?;
    let truth = a.truth.clone().unwrap_or_else(|| a.out.with_extension("truth.csv"));
    csvio::write_hourly_csv(&a.out, &c.observed)?;
    csvio::write_truth_csv(&truth, &c.truth, &c.masked)?;
    let mut m = ctx.manifest("synth");
    m.output("cohort", &a.out)
        .output("truth", &truth)
        .param("participants", cfg.n_participants)
        .param("weeks", cfg.n_weeks)
        .param("missing_rate", cfg.missing_rate)
        .param("overnight_nonwear_prob", cfg.overnight_nonwear_prob)
        .param("ar_coefficient", cfg.ar_coefficient)
        .param("diurnal_amplitude", cfg.diurnal_amplitude)
        .param("weekend_multiplier", cfg.weekend_multiplier)
        .param("zero_inflation_prob", cfg.zero_inflation_prob)
        .time("total", t0);
    m.write(&manifest_path(&a.out))?;
    ctx.log(format!("wrote {} participants to {}", c.observed.len(), a.out.display()));
    Ok(())
}

fn rollup(ctx: &Ctx, a: &RollupArgs) -> Result<()> {
    let t0 = Instant::now();
    if a.epoch_day_of_week > 6 {
        return Err(Error::Invalid("--epoch-day-of-week must lie in 0..=6".into()));
    }
    let anchor = CalendarAnchor {
        epoch_day_of_week: a.epoch_day_of_week,
    };
    let mut cohort = csvio::read_minute_csv(&a.input, anchor)?;
    let mut shifts = Vec::new();
    if a.align {
        if let Some(first) = cohort.first() {
            let reference = daily_step_profile(first);
            for s in cohort.iter_mut() {
                let k = align_day_shift(s, &reference);
                shifts.push(k);
                *s = s.shift_days(k);
            }
        }
    }
    csvio::write_hourly_csv(&a.out, &cohort)?;
    let mut m = ctx.manifest("rollup");
    m.input("minutes", &a.input)
        .output("cohort", &a.out)
        .param("epoch_day_of_week", a.epoch_day_of_week)
        .param("day_shifts", &shifts)
        .time("total", t0);
    m.write(&manifest_path(&a.out))?;
    ctx.log(format!("rolled up {} participants", cohort.len()));
    Ok(())
}

fn split(ctx: &Ctx, a: &SplitArgs) -> Result<()> {
    let t0 = Instant::now();
    let cohort = load_cohort(ctx, &a.cohort.cohort)?;
    let s = stratified_split(&cohort, a.fold, DEFAULT_PROPORTIONS, ctx.seed)?;
    for w in &s.warnings {
        ctx.log(format!("warning: {w}"));
    }
    csvio::write_split_csv(&a.out, &cohort, &s)?;
    let mut m = ctx.manifest("split");
    m.input("cohort", &a.cohort.cohort)
        .output("split", &a.out)
        .param("fold", a.fold)
        .param("proportions", [s.proportions.train, s.proportions.validation, s.proportions.test])
        .param("strata", eval::split::N_STRATA)
        .time("total", t0);
    m.write(&manifest_path(&a.out))?;
    Ok(())
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let t0 = Instant::now();
    let cohort = load_cohort(ctx, &a.cohort.cohort)?;
    let s = load_split(ctx, &a.split, &cohort)?;
    let cfg = method_config(&a.model, &FileConfig::load(ctx.config.as_deref())?, ctx.seed);
    let task = EvalTask::from_split(&cohort, &s)?;
    let data = task.training_set()?;
    let tc: &TrainConfig = &cfg.attention;
    tc.validate()?;
    let mut model = AttentionModel::new(tc.shape, tc.d_k, tc.seed)?;
    if let Some(p) = &a.save_init {
        save_checkpoint(p, &model)?;
    }
    ctx.log(format!("training on {} targets, validating on {}", data.train.len(), data.val.len()));
    let log = fit(&mut model, &data, tc)?;
    for e in &log.epochs {
        ctx.log(format!("epoch {:>3}  train MAE {:.3}  val Micro MAE {:.3}", e.epoch, e.train_mae, e.val_micro_mae));
    }
    save_checkpoint(&a.out, &model)?;
    let log_path = a.out.with_extension("log.csv");
    atomic_write(&log_path, &report::train_log_csv(&log))?;
    let mut m = ctx.manifest("train");
    m.input("cohort", &a.cohort.cohort).output("model", &a.out).output("log", &log_path);
    if let Some(p) = &a.split.split {
        m.input("split", p);
    }
    if let Some(p) = &a.save_init {
        m.output("init", p);
    }
    record_config(&mut m, &cfg);
    m.param("fold", a.split.fold).param("best_epoch", log.best_epoch).time("total", t0);
    m.write(&manifest_path(&a.out))?;
    Ok(())
}

fn impute(ctx: &Ctx, a: &ImputeArgs) -> Result<()> {
    let t0 = Instant::now();
    let spec: MethodSpec = a.method.parse()?;
    let cohort = load_cohort(ctx, &a.cohort.cohort)?;
    let cfg = method_config(&a.model_flags, &FileConfig::load(ctx.config.as_deref())?, ctx.seed);
    let pretrained = a.model.as_deref().map(load_checkpoint).transpose()?;
    let targets: Vec<Vec<usize>> = cohort
        .iter()
        .map(|s| {
            (0..s.len())
                .filter(|&t| !s.is_observed(t) && (a.all_hours || is_eval_hour(s.block(t).hour_of_day)))
                .collect()
        })
        .collect();
    let (train, validation) = if spec.is_trained() && pretrained.is_none() {
        let s = load_split(ctx, &a.split, &cohort)?;
        // test blocks go back to training: imputation uses all observed data
        let train = cohort
            .iter()
            .zip(&s.participants)
            .map(|(c, p)| HourMask::from_indices(c.len(), p.train.iter().chain(&p.test).copied()))
            .collect();
        (train, s.masks(eval::Part::Validation, &cohort))
    } else {
        let empty: Vec<HourMask> = cohort.iter().map(|s| HourMask::empty(s.len())).collect();
        (empty.clone(), empty)
    };
    let task = EvalTask {
        series: &cohort,
        train,
        validation,
        holdout: cohort
            .iter()
            .zip(&targets)
            .map(|(s, t)| HourMask::from_indices(s.len(), t.iter().copied()))
            .collect(),
        targets,
    };
    let run = run_method(spec, &task, &cfg, pretrained.as_ref())?;
    let name = run.name.clone();
    let rows = task.targets.iter().enumerate().flat_map(|(p, ts)| {
        let name = name.as_str();
        let cohort = &cohort;
        let preds = &run.predictions[p];
        ts.iter().zip(preds).map(move |(&hour, &prediction)| PredictionRow {
            method: name,
            participant: &cohort[p],
            hour,
            prediction,
            truth: None,
        })
    });
    atomic_write(&a.out, &csvio::predictions_csv_bytes(rows))?;
    let mut m = ctx.manifest("impute");
    m.input("cohort", &a.cohort.cohort).output("predictions", &a.out).param("method", &name);
    if let Some(p) = &a.model {
        m.input("model", p);
    }
    record_config(&mut m, &cfg);
    m.param("blocks", task.n_targets()).time("total", t0);
    m.write(&manifest_path(&a.out))?;
    ctx.log(format!("imputed {} blocks with {name}", task.n_targets()));
    Ok(())
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    let t0 = Instant::now();
    let specs = a
        .methods
        .iter()
        .map(|s| s.trim().parse::<MethodSpec>())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if a.ensemble == 0 {
        return Err(Error::Invalid("--ensemble must be at least 1".into()));
    }
    let cohort = load_cohort(ctx, &a.cohort.cohort)?;
    let split = load_split(ctx, &a.split, &cohort)?;
    let cfg = method_config(&a.model_flags, &FileConfig::load(ctx.config.as_deref())?, ctx.seed);
    let truth = a.truth.as_deref().map(csvio::read_hourly_csv).transpose()?;
    let (series, masked) = match &truth {
        Some(t) => {
            let masked = t
                .masked
                .clone()
                .ok_or_else(|| Error::Invalid("the truth file needs a was_masked column".into()))?;
            let same = t.cohort.len() == cohort.len()
                && t.cohort.iter().zip(&cohort).all(|(x, y)| x.id == y.id && x.len() == y.len());
            if !same {
                return Err(Error::Invalid("cohort and truth files describe different participants".into()));
            }
            (t.cohort.as_slice(), Some(masked))
        }
        None => (cohort.as_slice(), None),
    };
    let task = match &masked {
        Some(m) => EvalTask::with_masked(series, &split, m)?,
        None => EvalTask::from_split(series, &split)?,
    };
    let pretrained = a.model.as_deref().map(load_checkpoint).transpose()?;
    ctx.log(format!("scoring {} blocks of {} participants", task.n_targets(), cohort.len()));

    let mut names = Vec::new();
    let mut predictions = Vec::new();
    let mut m = ctx.manifest("evaluate");
    for spec in &specs {
        let t = Instant::now();
        let run = if *spec == MethodSpec::Attention && a.ensemble > 1 && pretrained.is_none() {
            attention_ensemble(&task, &cfg, a.ensemble)?
        } else {
            run_method(*spec, &task, &cfg, pretrained.as_ref())?
        };
        if let Some(log) = &run.log {
            let p = a.out_dir.join(format!("{}.log.csv", file_stem(&run.name)));
            atomic_write(&p, &report::train_log_csv(log))?;
            m.output(&format!("log:{}", run.name), &p);
        }
        ctx.log(format!("{} done in {:.1}s", run.name, t.elapsed().as_secs_f64()));
        m.time(&run.name, t);
        names.push(run.name);
        predictions.push(run.predictions);
    }
    let reference = match &a.reference {
        None => 0,
        Some(r) => names
            .iter()
            .position(|n| n == r)
            .ok_or_else(|| Error::Invalid(format!("reference `{r}` is not among the methods")))?,
    };
    let truths = task.truths();
    let bins = participant_missing_bins(&cohort);
    let rep = build_report(&names, &predictions, &truths, &bins, reference)?;
    let tests: Vec<_> = rep
        .methods
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != reference)
        .map(|(_, s)| {
            let r = &rep.methods[reference];
            (s.name.clone(), r.name.clone(), paired_t_test(&s.participant_mae, &r.participant_mae))
        })
        .collect();

    let out = |name: &str| a.out_dir.join(name);
    let files = [
        ("summary", out("summary.csv"), report::summary_csv(&rep)),
        ("step_bins", out("step_bins.csv"), report::step_bins_csv(&rep)),
        ("report", out("report.jsonl"), report::report_jsonl(&rep)),
        ("ttest", out("ttest.csv"), report::ttest_csv(&tests)),
    ];
    for (key, path, bytes) in &files {
        atomic_write(path, bytes)?;
        m.output(key, path);
    }
    let rows = names.iter().enumerate().flat_map(|(k, name)| {
        let task = &task;
        let predictions = &predictions;
        let truths = &truths;
        task.targets.iter().enumerate().flat_map(move |(p, ts)| {
            ts.iter().enumerate().map(move |(i, &hour)| PredictionRow {
                method: name,
                participant: &task.series[p],
                hour,
                prediction: predictions[k][p][i],
                truth: Some(truths[p][i]),
            })
        })
    });
    let pred_path = out("predictions.csv");
    atomic_write(&pred_path, &csvio::predictions_csv_bytes(rows))?;
    m.output("predictions", &pred_path).input("cohort", &a.cohort.cohort);
    if let Some(p) = &a.truth {
        m.input("truth", p);
    }
    if let Some(p) = &a.split.split {
        m.input("split", p);
    }
    if let Some(p) = &a.model {
        m.input("model", p);
    }
    record_config(&mut m, &cfg);
    m.param("methods", &names)
        .param("fold", a.split.fold)
        .param("ensemble", a.ensemble)
        .param("blocks", task.n_targets())
        .time("total", t0);
    m.write(&out("manifest.json"))?;
    for s in &rep.methods {
        ctx.log(format!(
            "{:<24} Macro MAE {:>9.3} ± {:<8.3} Micro MAE {:>9.3}",
            s.name, s.metrics.macro_mae, s.ci95, s.metrics.micro_mae
        ));
    }
    Ok(())
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' }).collect()
}

fn attention_ensemble(task: &EvalTask<'_>, cfg: &MethodConfig, k: usize) -> Result<eval::MethodRun> {
    let data = task.training_set()?;
    let mut models = Vec::with_capacity(k);
    for i in 0..k {
        let mut tc = cfg.attention;
        tc.seed = stepimpute_core::rng::derive(tc.seed, &[0xE5, i as u64]);
        let mut model = AttentionModel::new(tc.shape, tc.d_k, tc.seed)?;
        fit(&mut model, &data, &tc)?;
        models.push(model);
    }
    let views = task.eval_views()?;
    let flat = ensemble_predict(&models, &views, &task.instances(), cfg.attention.chunk_size)?;
    let mut it = flat.into_iter();
    Ok(eval::MethodRun {
        name: "attention".into(),
        predictions: task.targets.iter().map(|ts| it.by_ref().take(ts.len()).collect()).collect(),
        log: None,
        model: None,
    })
}

fn acf_cmd(ctx: &Ctx, a: &AcfArgs) -> Result<()> {
    let t0 = Instant::now();
    let cohort = load_cohort(ctx, &a.cohort.cohort)?;
    let values = acf(&cohort, a.max_lag);
    atomic_write(&a.out, &report::acf_csv(&values))?;
    let mut m = ctx.manifest("acf");
    m.input("cohort", &a.cohort.cohort)
        .output("acf", &a.out)
        .param("max_lag", a.max_lag)
        .param("min_pairs", eval::acf::MIN_PAIRS)
        .time("total", t0);
    m.write(&manifest_path(&a.out))?;
    Ok(())
}

fn attn_export(ctx: &Ctx, a: &AttnExportArgs) -> Result<()> {
    let t0 = Instant::now();
    let cohort = load_cohort(ctx, &a.cohort.cohort)?;
    let model = load_checkpoint(&a.model)?;
    let (holdout, targets): (Vec<HourMask>, Vec<Instance>) = match &a.split {
        Some(p) => {
            let s = csvio::parse_split_csv(p, &read_to_string(p)?, &cohort, 0, ctx.seed, DEFAULT_PROPORTIONS)?;
            let masks = s.masks(eval::Part::Test, &cohort);
            let targets = s
                .participants
                .iter()
                .enumerate()
                .flat_map(|(p, ps)| ps.test.iter().map(move |&hour| Instance { participant: p, hour }))
                .collect();
            (masks, targets)
        }
        None => {
            let masks = cohort.iter().map(|s| HourMask::empty(s.len())).collect();
            let targets = cohort
                .iter()
                .enumerate()
                .flat_map(|(p, s)| {
                    eval::split::eligible_blocks(s).into_iter().map(move |hour| Instance { participant: p, hour })
                })
                .collect();
            (masks, targets)
        }
    };
    let views = cohort
        .iter()
        .zip(holdout)
        .map(|(s, h)| ParticipantView::new(s, h))
        .collect::<stepimpute_core::Result<Vec<_>>>()?;
    let maps = export_attention_maps(&model, &views, &targets)?;
    let mut m = ctx.manifest("attn-export");
    let overall = a.out_dir.join("attention_overall.csv");
    atomic_write(&overall, &report::attention_grid_csv(&maps, &maps.overall))?;
    m.output("overall", &overall);
    for d in 0..7 {
        let p = a.out_dir.join(format!("attention_dow{d}.csv"));
        atomic_write(&p, &report::attention_grid_csv(&maps, &maps.by_day_of_week[d]))?;
        m.output(&format!("dow{d}"), &p);
    }
    m.input("cohort", &a.cohort.cohort)
        .input("model", &a.model)
        .param("targets", maps.count)
        .param("targets_by_day_of_week", maps.count_by_day_of_week)
        .param("skipped", maps.skipped)
        .time("total", t0);
    m.write(&a.out_dir.join("manifest.json"))?;
    ctx.log(format!("averaged attention over {} targets ({} skipped)", maps.count, maps.skipped));
    Ok(())
}
