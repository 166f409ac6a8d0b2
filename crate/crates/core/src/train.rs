//! Full-batch training (plain gradient descent, or Adam on request) with
//! stratified splits, early stopping on validation AUC, resumable
//! checkpoints and repeated runs.
//!
//! Run `k` uses seed `config.seed + k` for both its split and its
//! initialization. Epoch `e` evaluates the loss, gradient and validation
//! AUC at the current parameters, then takes one step
//! `θ ← θ − lr · ∇L` (or the Adam update). The parameters with the best validation AUC are kept
//! and used for the test metrics.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{io_write, HeteroGraph};
use crate::metrics::{auc, PredictionSet, Scores, DEFAULT_THRESHOLD};
use crate::model::{ChgrlParams, LossBreakdown, Model, ModelInput, ModelKind, ModelSpec, NamedTensor};

const CHECKPOINT_FORMAT: &str = "chgrl-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;
const MIN_LABELED: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

/// Parameter update rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// `θ ← θ − lr · ∇L`.
    #[default]
    Gd,
    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the mean causal strength in the loss.
    pub lambda: f64,
    pub lr: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub split: SplitFractions,
    pub runs: usize,
    /// Epochs without a validation-AUC improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Stacked convolution layers.
    pub layers: usize,
    /// Average instead of sum over each relation's neighbors.
    pub mean_aggregation: bool,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.005,
            lr: 0.02,
            hidden: 64,
            epochs: 200,
            split: SplitFractions::default(),
            runs: 5,
            patience: 30,
            seed: 7,
            layers: 1,
            mean_aggregation: true,
            optimizer: Optimizer::Gd,
        }
    }
}

impl TrainConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let s = self.split;
        if (s.train + s.val + s.test - 1.0).abs() > 1e-9 {
            return bad(format!(
                "split fractions {} + {} + {} do not sum to 1",
                s.train, s.val, s.test
            ));
        }
        for (name, f) in [("train", s.train), ("val", s.val), ("test", s.test)] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("split.{name} = {f} must lie in (0, 1)"));
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda = {} must be positive", self.lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.hidden == 0 || self.layers == 0 {
            return bad("hidden and layers must be at least 1".into());
        }
        Ok(())
    }

    pub fn spec_for(&self, input: &ModelInput) -> ModelSpec {
        ModelSpec::for_input(input, self.hidden, self.layers, self.mean_aggregation)
    }
}

/// Disjoint, sorted patient index sets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split of the labeled patients of `g`.
pub fn split_nodes(g: &HeteroGraph, fractions: &SplitFractions, seed: u64) -> Result<Split> {
    split_labeled(&g.labeled_patients(), fractions, seed)
}

/// Each class is shuffled and cut separately: `round(n·val)` and
/// `round(n·test)` nodes (at least one each when the class has three or
/// more members), the rest to training.
pub fn split_labeled(labeled: &[(usize, u8)], fractions: &SplitFractions, seed: u64) -> Result<Split> {
    if labeled.len() < MIN_LABELED {
        return Err(Error::Precondition(format!(
            "{} labeled patients; at least {MIN_LABELED} are needed to split",
            labeled.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split::default();
    for class in [0u8, 1] {
        let mut members: Vec<usize> = labeled.iter().filter(|(_, y)| *y == class).map(|(p, _)| *p).collect();
        if members.is_empty() {
            return Err(Error::Precondition(format!("no labeled patient has class {class}")));
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let cut = |f: f64| {
            let k = (n as f64 * f).round() as usize;
            if n >= 3 {
                k.max(1)
            } else {
                k
            }
        };
        let n_val = cut(fractions.val).min(n.saturating_sub(1));
        let n_test = cut(fractions.test).min(n - n_val - usize::from(n - n_val > 1));
        split.val.extend_from_slice(&members[..n_val]);
        split.test.extend_from_slice(&members[n_val..n_val + n_test]);
        split.train.extend_from_slice(&members[n_val + n_test..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Model input plus labels, ready for training.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub input: ModelInput,
    /// Label per patient, `None` when unlabeled.
    pub labels: Vec<Option<u8>>,
}

impl TrainData {
    /// Uses the graph's features as-is; they must have no missing cells.
    pub fn from_graph(g: &HeteroGraph) -> Result<Self> {
        if !g.features().is_complete() {
            return Err(Error::Precondition(format!(
                "patient features have {} missing cells; impute them first",
                g.features().missing_count()
            )));
        }
        Self::with_features(g, g.features().values().clone())
    }

    pub fn with_features(g: &HeteroGraph, features: Array2<f64>) -> Result<Self> {
        Ok(TrainData {
            input: ModelInput::from_graph(g, features)?,
            labels: g.labels().to_vec(),
        })
    }

    pub fn labeled(&self) -> Vec<(usize, u8)> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|y| (i, y)))
            .collect()
    }

    fn with_labels(&self, idx: &[usize]) -> Result<Vec<(usize, u8)>> {
        idx.iter()
            .map(|&i| {
                self.labels
                    .get(i)
                    .copied()
                    .flatten()
                    .map(|y| (i, y))
                    .ok_or_else(|| Error::Invalid(format!("patient {i} in the split has no label")))
            })
            .collect()
    }

    /// Labels and class-1 probabilities for `idx`.
    pub fn predictions(&self, probs: &[f64], idx: &[usize]) -> Result<PredictionSet> {
        let l = self.with_labels(idx)?;
        PredictionSet::new(l.iter().map(|p| p.1).collect(), l.iter().map(|p| probs[p.0]).collect())
    }
}

/// One line of the run log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub main: f64,
    pub counterfactual: f64,
    pub causal_reg: f64,
    pub val_auc: f64,
}

impl EpochRecord {
    fn new(epoch: usize, l: &LossBreakdown, val_auc: f64) -> Self {
        EpochRecord {
            epoch,
            total: l.total,
            main: l.main,
            counterfactual: l.counterfactual,
            causal_reg: l.causal_reg,
            val_auc,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: ModelKind,
    pub run_index: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Test metrics at the best-validation parameters; `None` if the run failed.
    pub scores: Option<Scores>,
    pub failure: Option<String>,
    pub trace: Vec<EpochRecord>,
    pub test: Option<PredictionSet>,
    pub checkpoint: Option<PathBuf>,
}

impl RunResult {
    pub fn completed(&self) -> bool {
        self.scores.is_some()
    }
}

/// Everything needed to continue a run from an epoch boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct RunState {
    pub model: ModelKind,
    pub run_index: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub split: Split,
    /// Next epoch to execute.
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
    pub since_best: usize,
    pub trace: Vec<EpochRecord>,
    pub params: ChgrlParams,
    pub best_params: ChgrlParams,
    /// Adam first and second moments; `None` under plain descent.
    pub moments: Option<(ChgrlParams, ChgrlParams)>,
    pub failure: Option<String>,
    pub result: Option<RunResult>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    model: ModelKind,
    run_index: usize,
    seed: u64,
    config: TrainConfig,
    split: Split,
    epoch: usize,
    best_epoch: usize,
    best_val_auc: Option<f64>,
    since_best: usize,
    trace: Vec<EpochRecord>,
    params: Vec<NamedTensor>,
    best_params: Vec<NamedTensor>,
    moments: Option<(Vec<NamedTensor>, Vec<NamedTensor>)>,
    failure: Option<String>,
    result: Option<RunResult>,
}

impl RunState {
    pub fn finished(&self) -> bool {
        self.result.is_some()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.model,
            run_index: self.run_index,
            seed: self.seed,
            config: self.config.clone(),
            split: self.split.clone(),
            epoch: self.epoch,
            best_epoch: self.best_epoch,
            best_val_auc: self.best_val_auc,
            since_best: self.since_best,
            trace: self.trace.clone(),
            params: self.params.to_tensors(),
            best_params: self.best_params.to_tensors(),
            moments: self.moments.as_ref().map(|(m, v)| (m.to_tensors(), v.to_tensors())),
            failure: self.failure.clone(),
            result: self.result.clone(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(&ck).expect("checkpoint serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint and rebuilds its tensors for `spec`.
    pub fn load(path: &Path, spec: &ModelSpec) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let format_err = |message: String| Error::Format {
            path: path.into(),
            message,
        };
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| format_err(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(format_err(format!(
                "unsupported checkpoint `{}` version {}",
                ck.format, ck.version
            )));
        }
        let shape_err = |e: Error| match e {
            Error::Shape(m) => Error::Shape(format!("{}: {m}", path.display())),
            other => other,
        };
        let params = ChgrlParams::from_tensors(spec, &ck.params).map_err(shape_err)?;
        let best_params = ChgrlParams::from_tensors(spec, &ck.best_params).map_err(shape_err)?;
        let moments = match &ck.moments {
            None => None,
            Some((m, v)) => Some((
                ChgrlParams::from_tensors(spec, m).map_err(shape_err)?,
                ChgrlParams::from_tensors(spec, v).map_err(shape_err)?,
            )),
        };
        Ok(RunState {
            model: ck.model,
            run_index: ck.run_index,
            seed: ck.seed,
            config: ck.config,
            split: ck.split,
            epoch: ck.epoch,
            best_epoch: ck.best_epoch,
            best_val_auc: ck.best_val_auc,
            since_best: ck.since_best,
            trace: ck.trace,
            params,
            best_params,
            moments,
            failure: ck.failure,
            result: ck.result,
        })
    }

    /// Reads only the model kind and configuration stored in a checkpoint.
    pub fn peek(path: &Path) -> Result<(ModelKind, TrainConfig)> {
        #[derive(Deserialize)]
        struct Head {
            model: ModelKind,
            config: TrainConfig,
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let h: Head = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })?;
        Ok((h.model, h.config))
    }
}

/// Where and how often a run persists itself.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Root for `run_<k>/checkpoint.json` and `run_<k>/log.csv`.
    pub out_dir: Option<PathBuf>,
    /// Also checkpoint every this many epochs.
    pub checkpoint_every: Option<usize>,
    /// Stop (without finishing) once this many epochs have run in total.
    pub stop_after: Option<usize>,
}

impl TrainOptions {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        TrainOptions {
            out_dir: Some(dir.into()),
            ..Default::default()
        }
    }

    pub fn run_dir(&self, run_index: usize) -> Option<PathBuf> {
        self.out_dir.as_ref().map(|d| d.join(format!("run_{run_index}")))
    }

    fn checkpoint_path(&self, run_index: usize) -> Option<PathBuf> {
        self.run_dir(run_index).map(|d| d.join("checkpoint.json"))
    }
}

/// Drives runs of one model kind on one data set.
pub struct Trainer<'a> {
    pub data: &'a TrainData,
    pub config: TrainConfig,
    pub model: Model,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a TrainData, config: &TrainConfig, kind: ModelKind) -> Result<Self> {
        config.validate()?;
        let spec = config.spec_for(&data.input);
        Ok(Trainer {
            data,
            config: config.clone(),
            model: Model::new(spec, kind, config.lambda),
        })
    }

    /// Fresh state for run `k`.
    pub fn start(&self, run_index: usize) -> Result<RunState> {
        let seed = self.config.seed.wrapping_add(run_index as u64);
        let split = split_labeled(&self.data.labeled(), &self.config.split, seed)?;
        let params = self.model.init_params(seed);
        Ok(RunState {
            model: self.model.kind,
            run_index,
            seed,
            config: self.config.clone(),
            split,
            epoch: 0,
            best_epoch: 0,
            best_val_auc: None,
            since_best: 0,
            trace: Vec::new(),
            best_params: params.clone(),
            moments: match self.config.optimizer {
                Optimizer::Gd => None,
                Optimizer::Adam => Some((ChgrlParams::zeros(&self.model.spec), ChgrlParams::zeros(&self.model.spec))),
            },
            params,
            failure: None,
            result: None,
        })
    }

    fn done(&self, s: &RunState) -> bool {
        s.failure.is_some() || s.epoch >= self.config.epochs || s.since_best >= self.config.patience
    }

    /// One epoch: evaluate at the current parameters, track the best, step.
    pub fn step(&self, s: &mut RunState) -> Result<()> {
        let train = self.data.with_labels(&s.split.train)?;
        let outcome = self.model.loss_and_grad(&self.data.input, &s.params, &train);
        let (loss, grads, fwd) = match outcome {
            Ok(v) => v,
            Err(e) if e.is_numerical() => {
                s.failure = Some(format!("epoch {}: {e}", s.epoch));
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        if !loss.total.is_finite() {
            s.failure = Some(format!("epoch {}: loss is {}", s.epoch, loss.total));
            return Ok(());
        }
        // the probability floor in the loss hides NaN predictions
        if fwd.probs.iter().any(|p| !p.is_finite()) {
            s.failure = Some(format!("epoch {}: predictions became non-finite", s.epoch));
            return Ok(());
        }
        let val_auc = auc(&self.data.predictions(&fwd.positive_probs(), &s.split.val)?)?;
        s.trace.push(EpochRecord::new(s.epoch, &loss, val_auc));
        if s.best_val_auc.is_none_or(|b| val_auc > b) {
            s.best_val_auc = Some(val_auc);
            s.best_epoch = s.epoch;
            s.best_params = s.params.clone();
            s.since_best = 0;
        } else {
            s.since_best += 1;
        }
        match &mut s.moments {
            None => s.params.scaled_add(-self.config.lr, &grads),
            Some((m, v)) => adam_step(&mut s.params, m, v, &grads, self.config.lr, s.epoch + 1),
        }
        if let Some(name) = s.params.first_non_finite() {
            s.failure = Some(format!("epoch {}: parameter `{name}` became non-finite", s.epoch));
        }
        s.epoch += 1;
        Ok(())
    }

    /// Runs `s` until it stops, checkpointing per `opts`. Returns the result
    /// once the run is finished, `None` if `stop_after` interrupted it.
    pub fn advance(&self, s: &mut RunState, opts: &TrainOptions) -> Result<Option<RunResult>> {
        if let Some(r) = &s.result {
            return Ok(Some(r.clone()));
        }
        let ck = opts.checkpoint_path(s.run_index);
        while !self.done(s) {
            if opts.stop_after.is_some_and(|n| s.epoch >= n) {
                if let Some(p) = &ck {
                    s.save(p)?;
                }
                return Ok(None);
            }
            self.step(s)?;
            if let (Some(p), Some(every)) = (&ck, opts.checkpoint_every) {
                if every > 0 && s.epoch.is_multiple_of(every) {
                    s.save(p)?;
                }
            }
        }
        let result = self.finish(s, ck.clone())?;
        s.result = Some(result.clone());
        if let Some(p) = &ck {
            s.save(p)?;
            write_log(&s.trace, &p.with_file_name("log.csv"))?;
        }
        Ok(Some(result))
    }

    fn finish(&self, s: &RunState, checkpoint: Option<PathBuf>) -> Result<RunResult> {
        let (scores, test) = if s.failure.is_some() {
            (None, None)
        } else {
            let probs = self.model.predict(&self.data.input, &s.best_params)?;
            let test = self.data.predictions(&probs, &s.split.test)?;
            (Some(Scores::compute(&test, DEFAULT_THRESHOLD)?), Some(test))
        };
        Ok(RunResult {
            model: s.model,
            run_index: s.run_index,
            seed: s.seed,
            best_epoch: s.best_epoch,
            epochs_run: s.epoch,
            scores,
            failure: s.failure.clone(),
            trace: s.trace.clone(),
            test,
            checkpoint,
        })
    }

    /// A complete run from scratch.
    pub fn run(&self, run_index: usize, opts: &TrainOptions) -> Result<(RunState, Option<RunResult>)> {
        let mut s = self.start(run_index)?;
        let r = self.advance(&mut s, opts)?;
        Ok((s, r))
    }
}

fn adam_step(params: &mut ChgrlParams, m: &mut ChgrlParams, v: &mut ChgrlParams, g: &ChgrlParams, lr: f64, t: usize) {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let g = g.flatten();
    let (bc1, bc2) = (1.0 - B1.powi(t as i32), 1.0 - B2.powi(t as i32));
    let mut off = 0;
    m.for_each_mut(|_, d, _| {
        for (x, gi) in d.iter_mut().zip(&g[off..]) {
            *x = B1 * *x + (1.0 - B1) * gi;
        }
        off += d.len();
    });
    off = 0;
    v.for_each_mut(|_, d, _| {
        for (x, gi) in d.iter_mut().zip(&g[off..]) {
            *x = B2 * *x + (1.0 - B2) * gi * gi;
        }
        off += d.len();
    });
    let (m, v) = (m.flatten(), v.flatten());
    off = 0;
    params.for_each_mut(|_, d, _| {
        for (k, x) in d.iter_mut().enumerate() {
            let i = off + k;
            *x -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + EPS);
        }
        off += d.len();
    });
}

/// All `config.runs` repetitions, in parallel, in run order.
pub fn train(data: &TrainData, config: &TrainConfig, kind: ModelKind, opts: &TrainOptions) -> Result<Vec<RunResult>> {
    let trainer = Trainer::new(data, config, kind)?;
    (0..config.runs)
        .into_par_iter()
        .map(|k| {
            let (_, r) = trainer.run(k, opts)?;
            r.ok_or_else(|| Error::Invalid(format!("run {k} was interrupted")))
        })
        .collect()
}

/// Continues the run stored at `checkpoint` under `config`. A finished run
/// returns its stored result.
pub fn resume(checkpoint: &Path, data: &TrainData, config: &TrainConfig, opts: &TrainOptions) -> Result<(RunState, Option<RunResult>)> {
    let (kind, _) = RunState::peek(checkpoint)?;
    let trainer = Trainer::new(data, config, kind)?;
    let mut s = RunState::load(checkpoint, &trainer.model.spec)?;
    s.config = config.clone();
    let r = trainer.advance(&mut s, opts)?;
    Ok((s, r))
}

/// `epoch,L_t,L_m,L_cf,L_cr,val_auc`, one line per epoch.
pub fn write_log(trace: &[EpochRecord], path: &Path) -> Result<()> {
    use std::io::Write;
    io_write(path, |w| {
        writeln!(w, "epoch,L_t,L_m,L_cf,L_cr,val_auc")?;
        for r in trace {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.epoch, r.total, r.main, r.counterfactual, r.causal_reg, r.val_auc
            )?;
        }
        Ok(())
    })
}
