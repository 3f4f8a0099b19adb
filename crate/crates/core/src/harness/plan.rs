use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::archzoo::{ArchKind, ArchVariant, Precision, LADDER};
use crate::error::{Error, Result};
use crate::rng::{hash64, hash_str};
use crate::taskgen::{TaskKind, TaskSpec};
use crate::trainer::{steps_for_batch, steps_for_vocab, RunConfig, TrainConfig};

/// Hyperparameter varied along a sweep's x-axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisParam {
    /// Model dimension.
    D,
    /// Training sequence length.
    N,
    /// Attention heads.
    M,
    /// Layers.
    L,
    /// Batch size; steps follow so the number of training sequences is constant.
    Batch,
    /// Vocabulary size; steps follow as `400 * S`.
    S,
}

impl AxisParam {
    pub fn name(self) -> &'static str {
        match self {
            AxisParam::D => "d",
            AxisParam::N => "n",
            AxisParam::M => "m",
            AxisParam::L => "l",
            AxisParam::Batch => "batch",
            AxisParam::S => "s",
        }
    }
}

impl fmt::Display for AxisParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings shared by every cell unless the axis varies them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Fixed step count, overriding the batch- and vocabulary-axis rules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub l2: f64,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "default_eval_batches")]
    pub eval_batches: usize,
    #[serde(default = "default_per_case")]
    pub per_case_count: usize,
}

impl Default for Overrides {
    fn default() -> Self {
        Overrides {
            steps: None,
            batch: default_batch(),
            dropout: 0.0,
            l2: 0.0,
            eval_interval: default_eval_interval(),
            eval_batches: default_eval_batches(),
            per_case_count: default_per_case(),
        }
    }
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
fn default_seeds() -> usize {
    5
}
fn default_d() -> usize {
    128
}
fn default_heads() -> usize {
    4
}
fn default_layers() -> usize {
    2
}

/// Ten learning rates spaced log-uniformly from 1e-5 to 1e-2.
pub fn default_lrs() -> Vec<f64> {
    (0..10).map(|i| 10f64.powf(-5.0 + 3.0 * i as f64 / 9.0)).collect()
}

/// A grid of training runs: every architecture at every (x, lr) with
/// `seeds` repetitions.
///
/// JSON schema (unknown keys are rejected):
///
/// ```json
/// {
///   "seed": 0,
///   "task": {"kind": "case", "n": 128, "vocab": 100},
///   "archs": ["nap", "sum"],
///   "axis": "d",
///   "values": [32, 64, 128],
///   "lrs": [0.0003, 0.001],
///   "seeds": 5,
///   "d": 128, "heads": 4, "layers": 2,
///   "precision": "f32",
///   "overrides": {"steps": 3200, "batch": 32, "dropout": 0.0, "l2": 0.0,
///                 "eval_interval": 100, "eval_batches": 32, "per_case_count": 1000}
/// }
/// ```
///
/// Everything after `values` is optional; `lrs` defaults to
/// [`default_lrs`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    /// Experiment seed mixed into every cell seed.
    #[serde(default)]
    pub seed: u64,
    pub task: TaskSpec,
    pub archs: Vec<ArchVariant>,
    pub axis: AxisParam,
    pub values: Vec<usize>,
    #[serde(default = "default_lrs")]
    pub lrs: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub overrides: Overrides,
}

/// Identity of one cell in a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellKey {
    pub arch: ArchVariant,
    pub x: usize,
    pub lr: f64,
    pub seed_index: usize,
}

impl CellKey {
    /// Hashable identity; learning rates compare by bit pattern.
    pub fn id(&self) -> (String, usize, u64, usize) {
        (self.arch.to_string(), self.x, self.lr.to_bits(), self.seed_index)
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} x={} lr={:e} seed#{}", self.arch, self.x, self.lr, self.seed_index)
    }
}

impl SweepPlan {
    pub fn from_json(text: &str) -> Result<SweepPlan> {
        let plan: SweepPlan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn cell_count(&self) -> usize {
        self.archs.len() * self.values.len() * self.lrs.len() * self.seeds
    }

    /// All cells, ordered by architecture, x, learning rate, then seed.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::with_capacity(self.cell_count());
        for &arch in &self.archs {
            for &x in &self.values {
                for &lr in &self.lrs {
                    for seed_index in 0..self.seeds {
                        out.push(CellKey { arch, x, lr, seed_index });
                    }
                }
            }
        }
        out
    }

    /// `hash64(experiment seed, arch, x, lr bits, seed index)`.
    pub fn cell_seed(&self, cell: &CellKey) -> u64 {
        hash64(&[self.seed, hash_str(&cell.arch.to_string()), cell.x as u64, cell.lr.to_bits(), cell.seed_index as u64])
    }

    /// Complete training configuration for `cell`.
    pub fn run_config(&self, cell: &CellKey) -> RunConfig {
        let o = &self.overrides;
        let mut task = self.task;
        let (mut d, mut heads, mut layers, mut batch) = (self.d, self.heads, self.layers, o.batch);
        let mut steps = None;
        match self.axis {
            AxisParam::D => d = cell.x,
            AxisParam::N => task.n = cell.x,
            AxisParam::M => heads = cell.x,
            AxisParam::L => layers = cell.x,
            AxisParam::Batch => {
                batch = cell.x;
                steps = Some(steps_for_batch(cell.x));
            }
            AxisParam::S => {
                task.vocab = cell.x;
                steps = Some(steps_for_vocab(cell.x));
            }
        }
        let mut train = TrainConfig::new(cell.lr);
        train.steps = o.steps.or(steps).unwrap_or(train.steps);
        train.batch = batch;
        train.dropout = o.dropout;
        train.l2 = o.l2;
        train.eval_interval = o.eval_interval;
        train.eval_batches = o.eval_batches;
        train.per_case_count = o.per_case_count;
        train.seed = self.cell_seed(cell);
        let mut cfg = RunConfig::new(cell.arch, task, d, train);
        cfg.heads = heads;
        cfg.layers = layers;
        cfg.precision = self.precision;
        cfg
    }

    /// Checks the plan and every cell configuration up front, so a sweep
    /// never starts with a cell that cannot run.
    pub fn validate(&self) -> Result<()> {
        if self.archs.is_empty() || self.values.is_empty() || self.lrs.is_empty() || self.seeds == 0 {
            return Err(Error::config("plan needs at least one architecture, x value, learning rate and seed"));
        }
        let mut seen = std::collections::HashSet::new();
        for cell in self.cells() {
            if !seen.insert(cell.id()) {
                return Err(Error::config(format!("duplicate cell {cell}")));
            }
            self.run_config(&cell).validate().map_err(|e| Error::config(format!("cell {cell}: {e}")))?;
        }
        Ok(())
    }
}

/// Named sweep presets over the standard experiment grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Case task, per-token output, model dimension axis.
    CaseDim,
    /// Case task, sequence length axis (case accuracies).
    CaseLength,
    /// Case task, batch size axis with a constant number of sequences.
    CaseBatch,
    /// BERT modification ladder on the case task, dimension axis.
    Ablation,
    /// First-token output, dimension axis.
    FirstDim,
    /// First-token output, head count axis at d = 128.
    FirstHeads,
    /// First-token output, depth axis.
    FirstDepth,
    /// Mode task, dimension axis.
    ModeDim,
    /// Mode task, vocabulary axis with `400 * S` steps.
    ModeVocab,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::CaseDim,
        Preset::CaseLength,
        Preset::CaseBatch,
        Preset::Ablation,
        Preset::FirstDim,
        Preset::FirstHeads,
        Preset::FirstDepth,
        Preset::ModeDim,
        Preset::ModeVocab,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::CaseDim => "case-dim",
            Preset::CaseLength => "case-length",
            Preset::CaseBatch => "case-batch",
            Preset::Ablation => "ablation",
            Preset::FirstDim => "first-dim",
            Preset::FirstHeads => "first-heads",
            Preset::FirstDepth => "first-depth",
            Preset::ModeDim => "mode-dim",
            Preset::ModeVocab => "mode-vocab",
        }
    }

    pub fn plan(self) -> SweepPlan {
        let main: Vec<ArchVariant> = ArchKind::ALL.iter().map(|&k| ArchVariant::of(k)).collect();
        let pow2 = |lo: u32, hi: u32| (lo..=hi).map(|p| 1usize << p).collect::<Vec<_>>();
        let case = TaskSpec { kind: TaskKind::Case, n: 128, vocab: 100 };
        let first = TaskSpec { kind: TaskKind::FirstToken, n: 128, vocab: 100 };
        let mode = TaskSpec { kind: TaskKind::Mode, n: 128, vocab: 10 };
        let (task, archs, axis, values) = match self {
            Preset::CaseDim => (case, main, AxisParam::D, pow2(3, 10)),
            Preset::CaseLength => (case, main, AxisParam::N, pow2(2, 9)),
            Preset::CaseBatch => (case, main, AxisParam::Batch, pow2(0, 7)),
            Preset::Ablation => {
                let ladder = LADDER.iter().map(|s| s.parse().expect("ladder names parse")).collect();
                (case, ladder, AxisParam::D, pow2(3, 10))
            }
            Preset::FirstDim => (first, main, AxisParam::D, pow2(3, 10)),
            Preset::FirstHeads => (first, main, AxisParam::M, pow2(0, 5)),
            Preset::FirstDepth => (first, main, AxisParam::L, pow2(0, 6)),
            Preset::ModeDim => (mode, main, AxisParam::D, pow2(3, 10)),
            Preset::ModeVocab => (mode, main, AxisParam::S, pow2(1, 8)),
        };
        SweepPlan {
            seed: 0,
            task,
            archs,
            axis,
            values,
            lrs: default_lrs(),
            seeds: default_seeds(),
            d: default_d(),
            heads: default_heads(),
            layers: default_layers(),
            precision: Precision::F64,
            overrides: Overrides::default(),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            Error::config(format!("unknown preset {s:?} ({})", names.join(", ")))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SweepPlan {
        let mut p = Preset::CaseDim.plan();
        p.archs = vec!["nap".parse().unwrap(), "sum".parse().unwrap()];
        p.values = vec![8, 16];
        p.lrs = vec![1e-3, 3e-3];
        p.seeds = 2;
        p
    }

    #[test]
    fn default_lr_grid_is_log_uniform() {
        let lrs = default_lrs();
        assert_eq!(lrs.len(), 10);
        assert!((lrs[0] - 1e-5).abs() < 1e-20 && (lrs[9] - 1e-2).abs() < 1e-15);
        for w in lrs.windows(2) {
            assert!((w[1] / w[0] - 10f64.powf(1.0 / 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn cells_enumerate_the_full_grid() {
        let p = tiny();
        assert_eq!(p.cell_count(), 16);
        assert_eq!(p.cells().len(), 16);
    }

    #[test]
    fn cell_seeds_are_distinct_over_presets() {
        for preset in Preset::ALL {
            let p = preset.plan();
            let seeds: std::collections::HashSet<u64> = p.cells().iter().map(|c| p.cell_seed(c)).collect();
            assert_eq!(seeds.len(), p.cell_count(), "{}", preset.name());
        }
    }

    #[test]
    fn presets_validate_and_follow_axis_rules() {
        for preset in Preset::ALL {
            preset.plan().validate().unwrap();
        }
        let p = Preset::CaseBatch.plan();
        let c = p.run_config(&CellKey { arch: p.archs[0], x: 4, lr: 1e-3, seed_index: 0 });
        assert_eq!((c.train.batch, c.train.steps), (4, 25_600));
        let p = Preset::ModeVocab.plan();
        let c = p.run_config(&CellKey { arch: p.archs[0], x: 16, lr: 1e-3, seed_index: 0 });
        assert_eq!((c.task.vocab, c.train.steps), (16, 6400));
        let p = Preset::FirstHeads.plan();
        let c = p.run_config(&CellKey { arch: p.archs[0], x: 32, lr: 1e-3, seed_index: 0 });
        assert_eq!((c.heads, c.d), (32, 128));
    }

    #[test]
    fn unknown_plan_keys_rejected() {
        let mut v = serde_json::to_value(tiny()).unwrap();
        v["learning_rates"] = serde_json::json!([1e-3]);
        assert!(SweepPlan::from_json(&v.to_string()).unwrap_err().is_config());
        let mut v = serde_json::to_value(tiny()).unwrap();
        v["overrides"]["warmup"] = serde_json::json!(3);
        assert!(SweepPlan::from_json(&v.to_string()).unwrap_err().is_config());
    }

    #[test]
    fn plan_json_round_trips_with_defaults() {
        let text = r#"{"task": {"kind": "mode", "n": 16, "vocab": 4}, "archs": ["sum"], "axis": "d", "values": [8]}"#;
        let p = SweepPlan::from_json(text).unwrap();
        assert_eq!(p.seeds, 5);
        assert_eq!(p.lrs, default_lrs());
        let again = SweepPlan::from_json(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn invalid_cells_rejected_up_front() {
        let mut p = tiny();
        p.axis = AxisParam::M;
        p.values = vec![3];
        assert!(p.validate().unwrap_err().is_config());
        let mut p = tiny();
        p.lrs.push(1e-3);
        assert!(p.validate().is_err());
    }
}
