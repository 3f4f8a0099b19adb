//! Shared fixtures for integration tests.

use napool::archzoo::ArchVariant;
use napool::harness::{CellKey, CellSummary, ChannelMode, GridSpec, Metric};
use napool::taskgen::{TaskKind, TaskSpec};
use napool::trainer::{RunConfig, RunStatus, Summary, TrainConfig};

pub const GOLDEN_PPM: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/grid.ppm");

/// Fixed synthetic records on a 3 x 4 grid with three seeds per cell,
/// including a failed cell and a diverged seed.
pub fn golden_records() -> Vec<CellSummary> {
    let arch: ArchVariant = "nap".parse().unwrap();
    let task = TaskSpec { kind: TaskKind::Case, n: 16, vocab: 100 };
    let mut out = Vec::new();
    for (i, &x) in [8usize, 16, 32, 64].iter().enumerate() {
        for (j, &lr) in [1e-4, 1e-3, 1e-2].iter().enumerate() {
            for seed in 0..3 {
                let acc = ((i + 1) * (j + 2) * (seed + 1)) as f64 / 36.0;
                let status = match (i, j, seed) {
                    (3, 2, 0) => RunStatus::Diverged,
                    (0, 0, _) => RunStatus::Failed,
                    _ => RunStatus::Ok,
                };
                out.push(CellSummary {
                    cell: CellKey { arch, x, lr, seed_index: seed },
                    run: RunConfig::new(arch, task, x, TrainConfig::new(lr)),
                    status,
                    param_count: 0,
                    summary: Summary {
                        train_acc: acc.min(1.0),
                        val_acc: acc / 2.0,
                        train_case: Some([acc.min(1.0), 0.5, 1.0 - acc.min(1.0)]),
                        val_case: None,
                    },
                    error: None,
                });
            }
        }
    }
    out
}


pub fn golden_spec() -> GridSpec {
    GridSpec {
        mode: ChannelMode::MinMeanMax,
        metric: Metric::Train,
        upscale: 2,
        lrs: vec![1e-4, 1e-3, 1e-2],
        xs: vec![8, 16, 32, 64],
    }
}
