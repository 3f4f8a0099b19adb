use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::archzoo::ArchVariant;
use crate::error::{Error, Result};
use crate::trainer::RunStatus;

use super::sweep::CellSummary;

/// Which accuracy a grid or aggregate reads: training length or
/// validation length.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Train,
    Validation,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Metric::Train),
            "validation" | "val" => Ok(Metric::Validation),
            _ => Err(Error::config(format!("unknown metric {s:?} (train, validation)"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Train => "train",
            Metric::Validation => "validation",
        })
    }
}

/// Max-over-training accuracy of a cell. Diverged cells count as 0;
/// failed cells have no value.
pub fn metric_value(s: &CellSummary, metric: Metric) -> Option<f64> {
    match s.status {
        RunStatus::Failed => None,
        RunStatus::Diverged => Some(0.0),
        RunStatus::Ok => Some(match metric {
            Metric::Train => s.summary.train_acc,
            Metric::Validation => s.summary.val_acc,
        }),
    }
}

/// (argmin, first, argmax) accuracies of a cell, under the same rules as
/// [`metric_value`]; `None` as well when the run recorded no case accuracies.
pub fn case_values(s: &CellSummary, metric: Metric) -> Option<[f64; 3]> {
    match s.status {
        RunStatus::Failed => None,
        RunStatus::Diverged => Some([0.0; 3]),
        RunStatus::Ok => match metric {
            Metric::Train => s.summary.train_case,
            Metric::Validation => s.summary.val_case,
        },
    }
}

/// Seed statistics of one (x, lr) cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub x: usize,
    pub lr: f64,
    pub seeds: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Groups records by (x, lr) and reduces over seeds, skipping failed cells.
/// Records must come from a single architecture.
pub fn cell_stats(records: &[CellSummary], metric: Metric) -> Result<Vec<CellStats>> {
    single_arch(records)?;
    let mut groups: BTreeMap<(usize, u64), Vec<f64>> = BTreeMap::new();
    for r in records {
        let entry = groups.entry((r.cell.x, r.cell.lr.to_bits())).or_default();
        if let Some(v) = metric_value(r, metric) {
            entry.push(v);
        }
    }
    Ok(groups
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|((x, lr), v)| CellStats {
            x,
            lr: f64::from_bits(lr),
            seeds: v.len(),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect())
}

fn single_arch(records: &[CellSummary]) -> Result<Option<ArchVariant>> {
    let first = records.first().map(|r| r.cell.arch);
    if records.iter().any(|r| Some(r.cell.arch) != first) {
        return Err(Error::config("records span several architectures; select one first"));
    }
    Ok(first)
}

/// The (x, lr) cell with the highest seed-mean metric. Ties go to the lower
/// learning rate, then the lower x.
pub fn aggregate_best(records: &[CellSummary], metric: Metric) -> Result<CellStats> {
    if records.is_empty() {
        return Err(Error::config("aggregate_best needs at least one record"));
    }
    let stats = cell_stats(records, metric)?;
    let mut best: Option<CellStats> = None;
    for s in stats {
        let better = match &best {
            None => true,
            Some(b) => s.mean > b.mean || (s.mean == b.mean && (s.lr, s.x) < (b.lr, b.x)),
        };
        if better {
            best = Some(s);
        }
    }
    best.ok_or_else(|| Error::Runtime("every record failed; nothing to aggregate".into()))
}

/// Records split by architecture, in order of first appearance.
pub fn by_arch(records: &[CellSummary]) -> Vec<(ArchVariant, Vec<CellSummary>)> {
    let mut out: Vec<(ArchVariant, Vec<CellSummary>)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|(a, _)| *a == r.cell.arch) {
            Some((_, v)) => v.push(r.clone()),
            None => out.push((r.cell.arch, vec![r.clone()])),
        }
    }
    out
}
