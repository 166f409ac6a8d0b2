//! Command-line front end: `generate`, `impute`, `train`, `evaluate`,
//! `report` and `pipeline`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::csinlf::{self, FitConfig, KnownEntries};
use crate::error::{Error, Result};
use crate::graph::{load_graph_dir, read_features, save_graph, write_features, HeteroGraph};
use crate::metrics::{aggregate, MetricTable, PredictionSet, Scores, DEFAULT_THRESHOLD};
use crate::model::{ChgrlParams, Model, ModelKind};
use crate::report::{emit_report, Embeddings, ReportInputs};
use crate::synth::{generate, label_recoverability_check, GenConfig};
use crate::train::{train, Optimizer, RunResult, RunState, Split, TrainConfig, TrainData, TrainOptions};

pub const IMPUTED_FEATURES: &str = "features_imputed.csv";
pub const IMPUTE_TRACE: &str = "impute_trace.csv";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const RUNS_FILE: &str = "runs.json";

#[derive(Debug, Parser)]
#[command(name = "chgrl", version, about = "Causal heterogeneous graph learning for comorbidity risk prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort with planted causal structure.
    Generate(GenerateArgs),
    /// Fill missing patient features by nonnegative latent factorization.
    Impute(ImputeArgs),
    /// Train a model for several seeded runs.
    Train(TrainArgs),
    /// Score a saved checkpoint and dump predictions and embeddings.
    Evaluate(EvaluateArgs),
    /// Aggregate trained runs into comparison tables.
    Report(ReportArgs),
    /// generate → impute → train both models → report.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator configuration (JSON). Unset fields take the defaults:
    /// 516 patients (201 case / 315 control), 9256 patient pairs,
    /// 386 diseases, 5299 disease pairs, 68 features.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    /// Graph directory holding features.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Latent dimension.
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    /// Magnitude regularization weight.
    #[arg(long, default_value_t = 0.01)]
    pub mu: f64,
    /// Causal-prior regularization weight.
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    /// Gradient-descent epochs.
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Initialization seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// CSV of `row_index,col_index` prior pairs for the causal regularizer.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Output directory for features_imputed.csv and impute_trace.csv.
    #[arg(long)]
    pub out: PathBuf,
}

impl ImputeArgs {
    fn fit_config(&self) -> FitConfig {
        FitConfig {
            dim: self.d,
            mu: self.mu,
            gamma: self.gamma,
            epochs: self.epochs,
            lr: self.lr,
            seed: self.seed,
        }
    }
}

/// Training flags. Each one overrides the JSON configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainOverrides {
    /// Causal-regularization weight λ [default: 0.005]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Learning rate η [default: 0.02]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden width hl [default: 64]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Maximum epochs per run [default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Number of seeded runs [default: 5]
    #[arg(long)]
    pub runs: Option<usize>,
    /// Early-stopping patience in epochs [default: 30]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Base seed; run k uses seed + k [default: 7]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Convolution layers [default: 1]
    #[arg(long)]
    pub layers: Option<usize>,
    /// Average over neighbors instead of summing [default: true]
    #[arg(long)]
    pub mean_aggregation: Option<bool>,
    /// Update rule: gd or adam [default: gd]
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<Optimizer>,
}

fn parse_optimizer(s: &str) -> std::result::Result<Optimizer, String> {
    match s {
        "gd" => Ok(Optimizer::Gd),
        "adam" => Ok(Optimizer::Adam),
        other => Err(format!("unknown optimizer `{other}` (gd|adam)")),
    }
}

impl TrainOverrides {
    pub fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(lambda, lr, hidden, epochs, runs, patience, seed, layers, mean_aggregation, optimizer);
        c
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Graph directory; features_imputed.csv is used when present.
    #[arg(long)]
    pub data: PathBuf,
    /// Training configuration (JSON with TrainConfig fields only).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// chgrl (full model) or rgcn (causal branch removed).
    #[arg(long, default_value = "chgrl")]
    pub model: ModelKind,
    /// Output directory; runs go to OUT/<model>/run_<k>/.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Graph directory the checkpoint was trained on.
    #[arg(long)]
    pub data: PathBuf,
    /// checkpoint.json written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Probability at or above which a patient is predicted positive.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory with one <model>/runs.json per trained model.
    #[arg(long)]
    pub runs: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Generator configuration (JSON); defaults when omitted.
    #[arg(long)]
    pub gen: Option<PathBuf>,
    /// Training configuration (JSON); defaults when omitted.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Output directory: data/, runs/ and the report files.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => {
            let mut cfg = match &a.config {
                Some(p) => GenConfig::from_json_file(p)?,
                None => GenConfig::default(),
            };
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            run_generate(&cfg, &a.out)
        }
        Command::Impute(a) => {
            let priors = match &a.priors {
                Some(p) => csinlf::load_prior_pairs(p)?,
                None => Vec::new(),
            };
            run_impute(&a.data, &a.fit_config(), priors, &a.out)
        }
        Command::Train(a) => {
            let cfg = a.overrides.apply(load_train_config(a.config.as_deref())?);
            run_train(&a.data, &cfg, a.model, &a.out).map(|_| ())
        }
        Command::Evaluate(a) => run_evaluate(&a.data, &a.checkpoint, &a.out, a.threshold).map(|_| ()),
        Command::Report(a) => run_report(&a.runs, &a.out).map(|_| ()),
        Command::Pipeline(a) => {
            let gen = match &a.gen {
                Some(p) => GenConfig::from_json_file(p)?,
                None => GenConfig::default(),
            };
            let cfg = a.overrides.apply(load_train_config(a.train.as_deref())?);
            run_pipeline(&gen, &cfg, &a.out).map(|_| ())
        }
    }
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_json_file(p),
        None => Ok(TrainConfig::default()),
    }
}

pub fn run_generate(cfg: &GenConfig, out: &Path) -> Result<()> {
    let (g, truth) = generate(cfg)?;
    save_graph(&g, out)?;
    truth.save(&out.join(GROUND_TRUTH))?;
    println!(
        "generated {} patients, {} diseases, {} edges in {}",
        g.patients(),
        g.diseases(),
        g.edge_count(),
        out.display()
    );
    println!("label recoverability AUC {:.4}", label_recoverability_check(&g, &truth)?);
    Ok(())
}

pub fn run_impute(data: &Path, fit: &FitConfig, priors: Vec<(usize, usize)>, out: &Path) -> Result<()> {
    let g = load_graph_dir(data)?;
    let known = KnownEntries::from_features(g.features())?;
    let model = csinlf::fit(&known, fit, priors)?;
    let filled = csinlf::impute(&model, g.features())?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_features(&filled, &out.join(IMPUTED_FEATURES))?;
    csinlf::write_trace(&model.trace, &out.join(IMPUTE_TRACE))?;
    println!(
        "imputed {} missing cells; objective {:.6} -> {:.6}",
        g.features().missing_count(),
        model.trace[0],
        model.trace[model.trace.len() - 1]
    );
    Ok(())
}

/// Graph plus training data, preferring `features_imputed.csv`.
pub fn load_training_data(dir: &Path) -> Result<(HeteroGraph, TrainData)> {
    let g = load_graph_dir(dir)?;
    let imputed = dir.join(IMPUTED_FEATURES);
    let data = if imputed.exists() {
        let f = read_features(&imputed, g.patients())?;
        if !f.is_complete() {
            return Err(Error::Precondition(format!(
                "{} still has {} missing cells",
                imputed.display(),
                f.missing_count()
            )));
        }
        TrainData::with_features(&g, f.values().clone())?
    } else {
        TrainData::from_graph(&g).map_err(|e| match e {
            Error::Precondition(m) => Error::Precondition(format!(
                "{}: {m} (run `chgrl impute` to write {IMPUTED_FEATURES})",
                dir.join("features.csv").display()
            )),
            other => other,
        })?
    };
    Ok((g, data))
}

pub fn run_train(data_dir: &Path, cfg: &TrainConfig, kind: ModelKind, out: &Path) -> Result<Vec<RunResult>> {
    let (_, data) = load_training_data(data_dir)?;
    let dir = out.join(kind.as_str());
    let results = train(&data, cfg, kind, &TrainOptions::in_dir(&dir))?;
    for r in &results {
        let run_dir = dir.join(format!("run_{}", r.run_index));
        if let Some(ck) = &r.checkpoint {
            if r.completed() {
                write_evaluation(&data, ck, &run_dir, DEFAULT_THRESHOLD)?;
            }
        }
        match &r.scores {
            Some(s) => println!(
                "{kind} run {}: best epoch {} of {}, test AUC {:.4} ACC {:.4} F1 {:.4}",
                r.run_index, r.best_epoch, r.epochs_run, s.auc, s.acc, s.f1
            ),
            None => println!(
                "{kind} run {}: failed: {}",
                r.run_index,
                r.failure.as_deref().unwrap_or("unknown")
            ),
        }
    }
    let text = serde_json::to_string_pretty(&results).expect("results serialize");
    let path = dir.join(RUNS_FILE);
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(results)
}

/// Best-validation parameters of a checkpoint, evaluated on every patient.
pub struct Evaluation {
    pub model: ModelKind,
    pub split: Split,
    pub probs: Vec<f64>,
    pub test: PredictionSet,
    pub scores: Scores,
    pub embeddings: Embeddings,
}

pub fn evaluate_checkpoint(data: &TrainData, checkpoint: &Path, threshold: f64) -> Result<Evaluation> {
    let (kind, cfg) = RunState::peek(checkpoint)?;
    let model = Model::new(cfg.spec_for(&data.input), kind, cfg.lambda);
    let state = RunState::load(checkpoint, &model.spec)?;
    evaluate_params(data, &model, &state.best_params, state.split, threshold)
}

fn evaluate_params(
    data: &TrainData,
    model: &Model,
    params: &ChgrlParams,
    split: Split,
    threshold: f64,
) -> Result<Evaluation> {
    let fwd = model.forward(&data.input, params)?;
    let probs = fwd.positive_probs();
    let test = data.predictions(&probs, &split.test)?;
    let scores = Scores::compute(&test, threshold)?;
    let n = data.labels.len();
    let embeddings = Embeddings {
        patients: (0..n).collect(),
        labels: data.labels.clone(),
        values: fwd.h_f[0].clone(),
    };
    Ok(Evaluation {
        model: model.kind,
        split,
        probs,
        test,
        scores,
        embeddings,
    })
}

fn write_evaluation(data: &TrainData, checkpoint: &Path, out: &Path, threshold: f64) -> Result<Evaluation> {
    use std::io::Write;
    let ev = evaluate_checkpoint(data, checkpoint, threshold)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut split_of = vec!["unlabeled"; data.labels.len()];
    for (name, idx) in [("train", &ev.split.train), ("val", &ev.split.val), ("test", &ev.split.test)] {
        for &i in idx {
            split_of[i] = name;
        }
    }
    crate::graph::io_write(&out.join("predictions.csv"), |w| {
        writeln!(w, "patient_index,split,label,prob")?;
        for (i, p) in ev.probs.iter().enumerate() {
            let l = data.labels[i].map(|l| l.to_string()).unwrap_or_default();
            writeln!(w, "{i},{},{l},{p}", split_of[i])?;
        }
        Ok(())
    })?;
    ev.embeddings.write(&out.join("embeddings.csv"))?;
    Ok(ev)
}

pub fn run_evaluate(data_dir: &Path, checkpoint: &Path, out: &Path, threshold: f64) -> Result<Evaluation> {
    let (_, data) = load_training_data(data_dir)?;
    let ev = write_evaluation(&data, checkpoint, out, threshold)?;
    let text = serde_json::to_string_pretty(&ev.scores).expect("scores serialize");
    let path = out.join("metrics.json");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    println!(
        "{}: test AUC {:.4} ACC {:.4} F1 {:.4}",
        ev.model, ev.scores.auc, ev.scores.acc, ev.scores.f1
    );
    Ok(ev)
}

/// Reads every `<model>/runs.json` under `runs` (models in name order) and
/// writes the comparison report to `out`.
pub fn run_report(runs: &Path, out: &Path) -> Result<MetricTable> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(runs)
        .map_err(|e| Error::io(runs, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RUNS_FILE).is_file())
        .collect();
    dirs.sort();
    let mut inputs = ReportInputs::default();
    for dir in &dirs {
        let path = dir.join(RUNS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let results: Vec<RunResult> = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let method = dir.file_name().and_then(|n| n.to_str()).unwrap_or("model").to_string();
        let done: Vec<&RunResult> = results.iter().filter(|r| r.completed()).collect();
        let scores: Vec<Scores> = done.iter().filter_map(|r| r.scores).collect();
        inputs
            .table
            .rows
            .push(aggregate(&method, &scores, results.len() - done.len())?);
        let mut pooled = PredictionSet::default();
        for r in &done {
            if let Some(t) = &r.test {
                pooled.labels.extend_from_slice(&t.labels);
                pooled.scores.extend_from_slice(&t.scores);
            }
        }
        if !pooled.is_empty() {
            inputs.predictions.push((method, pooled));
        }
        if inputs.embeddings.is_none() {
            if let Some(r) = done.first() {
                let p = dir.join(format!("run_{}", r.run_index)).join("embeddings.csv");
                if p.is_file() {
                    inputs.embeddings = Some(Embeddings::read(&p)?);
                }
            }
        }
    }
    emit_report(&inputs, out)?;
    for row in &inputs.table.rows {
        println!(
            "{}: AUC {:.4} ± {:.4}  ACC {:.4} ± {:.4}  F1 {:.4} ± {:.4}",
            row.method, row.auc.mean, row.auc.std, row.acc.mean, row.acc.std, row.f1.mean, row.f1.std
        );
    }
    Ok(inputs.table)
}

pub fn run_pipeline(gen: &GenConfig, cfg: &TrainConfig, out: &Path) -> Result<MetricTable> {
    let data = out.join("data");
    let runs = out.join("runs");
    run_generate(gen, &data)?;
    run_impute(&data, &FitConfig::default(), Vec::new(), &data)?;
    for kind in [ModelKind::Chgrl, ModelKind::Rgcn] {
        run_train(&data, cfg, kind, &runs)?;
    }
    run_report(&runs, out)
}
