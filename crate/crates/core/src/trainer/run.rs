use serde::{Deserialize, Serialize};

use crate::archzoo::{argmax_rows, forward, ArchVariant, Ctx, Model, ModelConfig, Precision};
use crate::error::{Error, Result};
use crate::gradcore::{Graph, Real};
use crate::rng::{derive, Rng};
use crate::taskgen::{gen_case_conditional, Batch, CaseLabel, TaskSpec, ARGMIN_TRIGGER};

use super::optim::{clip_global_norm, lr_at, Adam, Schedule};

/// Training hyperparameters. Optional fields default from the architecture:
/// the BERT reference warms up over the first 10% of steps and clips the
/// global gradient norm at 1.0; all other variants decay linearly without
/// clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub l2: f64,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "default_eval_batches")]
    pub eval_batches: usize,
    /// Validation length; defaults to the task's (half or twice the
    /// training length).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_val: Option<usize>,
    /// Examples per case for the per-case accuracies; 0 disables them.
    /// Only case tasks with a vocabulary above the argmin trigger have them.
    #[serde(default = "default_per_case")]
    pub per_case_count: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_steps() -> usize {
    3200
}
fn default_batch() -> usize {
    32
}
fn default_eval_interval() -> usize {
    100
}
fn default_eval_batches() -> usize {
    32
}
fn default_per_case() -> usize {
    1000
}

/// Sequences per evaluation batch, independent of the training batch size.
pub const EVAL_BATCH_SIZE: usize = 32;

/// Warmup length and clip norm of the BERT reference.
pub const BERT_WARMUP_FRACTION: f64 = 0.1;
pub const BERT_CLIP_NORM: f64 = 1.0;

impl TrainConfig {
    pub fn new(lr: f64) -> Self {
        TrainConfig {
            lr,
            steps: default_steps(),
            batch: default_batch(),
            schedule: None,
            warmup_steps: None,
            grad_clip: None,
            dropout: 0.0,
            l2: 0.0,
            eval_interval: default_eval_interval(),
            eval_batches: default_eval_batches(),
            n_val: None,
            per_case_count: default_per_case(),
            seed: 0,
        }
    }
}

/// Schedule, warmup length and clip norm after applying architecture
/// defaults.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolved {
    pub schedule: Schedule,
    pub warmup: usize,
    pub clip: Option<f64>,
}

/// One training cell: architecture, task, dimensions and hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub arch: ArchVariant,
    pub task: TaskSpec,
    pub d: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    pub train: TrainConfig,
    #[serde(default)]
    pub precision: Precision,
}

fn default_heads() -> usize {
    4
}
fn default_layers() -> usize {
    2
}

impl RunConfig {
    pub fn new(arch: ArchVariant, task: TaskSpec, d: usize, train: TrainConfig) -> Self {
        RunConfig { arch, task, d, heads: default_heads(), layers: default_layers(), train, precision: Precision::F64 }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            d: self.d,
            heads: self.heads,
            layers: self.layers,
            n_max: self.task.n.max(self.n_val()),
            vocab: self.task.vocab,
            head: self.task.head(),
            positional: self.task.positional(),
            dropout: self.train.dropout,
        }
    }

    pub fn n_val(&self) -> usize {
        self.train.n_val.unwrap_or_else(|| self.task.n_val())
    }

    pub fn resolved(&self) -> Resolved {
        let t = &self.train;
        let schedule = t.schedule.unwrap_or(if self.arch.use_warmup {
            Schedule::WarmupThenLinearDecay
        } else {
            Schedule::LinearDecay
        });
        let warmup = t.warmup_steps.unwrap_or_else(|| (BERT_WARMUP_FRACTION * t.steps as f64).ceil() as usize);
        let clip = t.grad_clip.or(self.arch.use_grad_clip.then_some(BERT_CLIP_NORM));
        Resolved { schedule, warmup, clip }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model_config().validate()?;
        let t = &self.train;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", t.lr)));
        }
        if t.steps == 0 || t.batch == 0 || t.eval_interval == 0 || t.eval_batches == 0 {
            return Err(Error::config("steps, batch, eval_interval and eval_batches must be positive"));
        }
        let r = self.resolved();
        if r.schedule == Schedule::WarmupThenLinearDecay && (r.warmup == 0 || r.warmup >= t.steps) {
            return Err(Error::config(format!("warmup length {} must lie in 1..{}", r.warmup, t.steps)));
        }
        if let Some(c) = r.clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::config(format!("clip norm must be positive, got {c}")));
            }
        }
        if !(t.l2 >= 0.0 && t.l2.is_finite()) {
            return Err(Error::config(format!("L2 weight must be nonnegative, got {}", t.l2)));
        }
        if self.n_val() == 0 {
            return Err(Error::config("validation length must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    /// Loss or gradients became non-finite; snapshots stop at the last
    /// valid evaluation.
    Diverged,
    /// The run could not be executed (recorded by the sweep runner).
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Number of optimizer steps taken.
    pub step: usize,
    /// Mean training loss since the previous snapshot.
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Accuracies for (argmin, first, argmax) at the training length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_case: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_case: Option<[f64; 3]>,
}

/// Max over training of every metric.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub train_acc: f64,
    pub val_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_case: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_case: Option<[f64; 3]>,
}

impl Summary {
    pub fn of(snapshots: &[Snapshot]) -> Summary {
        let max_case = |a: Option<[f64; 3]>, b: Option<[f64; 3]>| match (a, b) {
            (Some(a), Some(b)) => Some([a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])]),
            (a, b) => a.or(b),
        };
        snapshots.iter().fold(Summary::default(), |s, x| Summary {
            train_acc: s.train_acc.max(x.train_acc),
            val_acc: s.val_acc.max(x.val_acc),
            train_case: max_case(s.train_case, x.train_case),
            val_case: max_case(s.val_case, x.val_case),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run: RunConfig,
    pub status: RunStatus,
    pub param_count: usize,
    pub snapshots: Vec<Snapshot>,
    pub summary: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Fraction of rows whose first-maximum logit sits at the target.
pub fn accuracy_of<T: Real>(logits: &[T], width: usize, targets: &[usize]) -> f64 {
    let pred = argmax_rows(logits, width);
    let hits = pred.iter().zip(targets).filter(|(p, t)| p == t).count();
    hits as f64 / targets.len().max(1) as f64
}

/// Accuracy of `model` (eval mode) on `batch`.
pub fn batch_accuracy<T: Real>(model: &Model<T>, batch: &Batch) -> Result<f64> {
    let y = model.logits(&batch.tokens, batch.size, batch.n)?;
    Ok(accuracy_of(y.data(), y.last_dim(), &batch.targets))
}

/// Mean accuracy over `n_batches` fresh batches of length `n`.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    task: &TaskSpec,
    n: usize,
    n_batches: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..n_batches {
        total += batch_accuracy(model, &task.batch(n, batch_size, rng)?)?;
    }
    Ok(total / n_batches.max(1) as f64)
}

/// Accuracy on `count` samples from each case's conditional distribution,
/// in (argmin, first, argmax) order.
pub fn evaluate_cases<T: Real>(model: &Model<T>, task: &TaskSpec, n: usize, count: usize, rng: &mut Rng) -> Result<[f64; 3]> {
    const CHUNK: usize = 100;
    let mut out = [0.0; 3];
    for case in CaseLabel::ALL {
        let examples = gen_case_conditional(case, task.vocab, n, count, rng)?;
        let mut hits = 0.0;
        for chunk in examples.chunks(CHUNK) {
            let b = Batch::from_examples(chunk)?;
            hits += batch_accuracy(model, &b)? * chunk.len() as f64;
        }
        out[case.index()] = hits / count.max(1) as f64;
    }
    Ok(out)
}

/// Model plus optimizer state; one call to [`Trainer::step`] is one update.
pub struct Trainer<T: Real> {
    pub model: Model<T>,
    adam: Adam<T>,
    clip: Option<f64>,
    l2: f64,
    dropout_rng: Rng,
}

/// Loss and global gradient norm (before clipping) of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, clip: Option<f64>, l2: f64, dropout_rng: Rng) -> Self {
        let adam = Adam::new(model.params());
        Trainer { model, adam, clip, l2, dropout_rng }
    }

    /// Loss of `batch` under the current parameters, in eval mode.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.model.bind(&mut g, false);
        let mut ctx = Ctx { model: &self.model, vars: &vars, dropout: None };
        let y = forward(&mut ctx, &mut g, &batch.tokens, batch.size, batch.n)?;
        let l = g.cross_entropy_from_logits(y, &batch.targets)?;
        Ok(g.value(l).item().as_f64())
    }

    /// Forward, backward, optional clipping and one Adam update at `lr`.
    /// Non-finite loss or gradients leave the parameters untouched and
    /// return [`Error::NonFinite`].
    pub fn step(&mut self, batch: &Batch, lr: f64) -> Result<StepStats> {
        let mut g = Graph::new();
        let vars = self.model.bind(&mut g, true);
        let mut ctx = Ctx { model: &self.model, vars: &vars, dropout: Some(&mut self.dropout_rng) };
        let y = forward(&mut ctx, &mut g, &batch.tokens, batch.size, batch.n)?;
        let l = g.cross_entropy_from_logits(y, &batch.targets)?;
        let loss = g.value(l).item().as_f64();
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        g.backward(l)?;
        let mut grads: Vec<Vec<T>> = vars
            .iter()
            .zip(self.model.params())
            .map(|(&v, p)| g.grad(v).map_or_else(|| vec![T::zero(); p.len()], <[T]>::to_vec))
            .collect();
        drop(g);
        let grad_norm = match self.clip {
            Some(c) => clip_global_norm(&mut grads, c),
            None => clip_global_norm(&mut grads, f64::INFINITY),
        };
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        self.adam.step(self.model.params_mut(), &grads, lr, self.l2)?;
        Ok(StepStats { loss, grad_norm })
    }
}

/// Trains one cell from scratch and records its evaluation snapshots.
///
/// Every random stream derives from `train.seed`: parameter init, training
/// batches, dropout masks and evaluation data are independent streams.
pub fn train_run(cfg: &RunConfig) -> Result<MetricRecord> {
    match cfg.precision {
        Precision::F32 => train_run_typed::<f32>(cfg),
        Precision::F64 => train_run_typed::<f64>(cfg),
    }
}

pub fn train_run_typed<T: Real>(cfg: &RunConfig) -> Result<MetricRecord> {
    train_run_with(cfg, |_: &Trainer<T>, _: &Snapshot| {})
}

/// [`train_run_typed`] with a callback after every snapshot.
pub fn train_run_with<T: Real, F>(cfg: &RunConfig, mut on_snapshot: F) -> Result<MetricRecord>
where
    F: FnMut(&Trainer<T>, &Snapshot),
{
    cfg.validate()?;
    let seed = cfg.train.seed;
    let t = &cfg.train;
    let r = cfg.resolved();
    let mcfg = cfg.model_config();
    let model: Model<T> = Model::build(&mcfg, &mut derive(seed, "init"))?;
    let param_count = model.param_count();
    let mut trainer = Trainer::new(model, r.clip, t.l2, derive(seed, "dropout"));
    let mut data_rng = derive(seed, "data");
    let mut eval_rng = derive(seed, "eval");
    let (n, n_val) = (cfg.task.n, cfg.n_val());
    let cases = t.per_case_count > 0 && cfg.task.has_cases() && cfg.task.vocab > ARGMIN_TRIGGER;

    let mut snapshots = Vec::new();
    let mut status = RunStatus::Ok;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    for step in 0..t.steps {
        let batch = cfg.task.batch(n, t.batch, &mut data_rng)?;
        let lr = lr_at(r.schedule, t.lr, r.warmup, t.steps, step);
        match trainer.step(&batch, lr) {
            Ok(s) => {
                loss_sum += s.loss;
                loss_count += 1;
            }
            Err(Error::NonFinite(_)) => {
                status = RunStatus::Diverged;
                break;
            }
            Err(e) => return Err(e),
        }
        let done = step + 1;
        if done % t.eval_interval == 0 || done == t.steps {
            let m = &trainer.model;
            let snap = Snapshot {
                step: done,
                loss: loss_sum / loss_count.max(1) as f64,
                train_acc: evaluate(m, &cfg.task, n, t.eval_batches, EVAL_BATCH_SIZE, &mut eval_rng)?,
                val_acc: evaluate(m, &cfg.task, n_val, t.eval_batches, EVAL_BATCH_SIZE, &mut eval_rng)?,
                train_case: if cases { Some(evaluate_cases(m, &cfg.task, n, t.per_case_count, &mut eval_rng)?) } else { None },
                val_case: if cases { Some(evaluate_cases(m, &cfg.task, n_val, t.per_case_count, &mut eval_rng)?) } else { None },
            };
            on_snapshot(&trainer, &snap);
            snapshots.push(snap);
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    let summary = Summary::of(&snapshots);
    Ok(MetricRecord { run: cfg.clone(), status, param_count, snapshots, summary, error: None })
}
