//! Sweep plans, resumable JSONL results, aggregation and grid rendering,
//! plus the command-line front end.

mod aggregate;
pub mod cli;
mod plan;
mod render;
mod sweep;

pub use aggregate::{aggregate_best, by_arch, case_values, cell_stats, metric_value, CellStats, Metric};
pub use plan::{default_lrs, AxisParam, CellKey, Overrides, Preset, SweepPlan};
pub use render::{channel_byte, render_grid, ChannelMode, GridSpec, Image};
pub use sweep::{read_results, read_summaries, run_sweep, run_sweep_with, summaries, CellSummary, ResultLine, SweepStats};
