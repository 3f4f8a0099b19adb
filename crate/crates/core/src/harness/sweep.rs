use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use crossbeam_channel::unbounded;
use serde::{Deserialize, Serialize};

use crate::archzoo::Precision;
use crate::error::{Error, Result};
use crate::trainer::{train_run_with, MetricRecord, RunConfig, RunStatus, Snapshot, Summary, Trainer};

use super::plan::{CellKey, SweepPlan};

/// Final outcome of one sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSummary {
    pub cell: CellKey,
    pub run: RunConfig,
    pub status: RunStatus,
    pub param_count: usize,
    pub summary: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CellSummary {
    pub fn from_record(cell: CellKey, rec: &MetricRecord) -> Self {
        CellSummary {
            cell,
            run: rec.run.clone(),
            status: rec.status,
            param_count: rec.param_count,
            summary: rec.summary.clone(),
            error: rec.error.clone(),
        }
    }

    fn failed(cell: CellKey, run: RunConfig, error: String) -> Self {
        CellSummary { cell, run, status: RunStatus::Failed, param_count: 0, summary: Summary::default(), error: Some(error) }
    }
}

/// One line of a results file.
///
/// ```json
/// {"kind":"snapshot","cell":{"arch":"nap","x":128,"lr":0.001,"seed_index":0},"snapshot":{"step":100,...}}
/// {"kind":"summary","cell":{...},"run":{...},"status":"ok","param_count":401154,"summary":{"train_acc":0.99,...}}
/// ```
///
/// Snapshot lines stream while a cell trains; the summary line marks the
/// cell complete. A cell whose latest summary is `failed` is rerun on resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum ResultLine {
    Snapshot { cell: CellKey, snapshot: Snapshot },
    Summary(CellSummary),
}

/// Reads every line of a results file. A final line cut short by an
/// interrupted write is ignored; any other malformed line is an error.
pub fn read_results(path: &Path) -> Result<Vec<ResultLine>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut lines = Vec::new();
    let mut reader = BufReader::new(file);
    let mut buf = String::new();
    let mut lineno = 0;
    loop {
        buf.clear();
        if reader.read_line(&mut buf)? == 0 {
            break;
        }
        lineno += 1;
        if buf.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&buf) {
            Ok(line) => lines.push(line),
            Err(_) if !buf.ends_with('\n') => break,
            Err(e) => return Err(Error::Runtime(format!("{}:{lineno}: {e}", path.display()))),
        }
    }
    Ok(lines)
}

/// Latest summary per cell, in file order of first appearance.
pub fn summaries(lines: &[ResultLine]) -> Vec<CellSummary> {
    let mut order = Vec::new();
    let mut latest: HashMap<_, CellSummary> = HashMap::new();
    for line in lines {
        if let ResultLine::Summary(s) = line {
            let id = s.cell.id();
            if !latest.contains_key(&id) {
                order.push(id.clone());
            }
            latest.insert(id, s.clone());
        }
    }
    order.into_iter().filter_map(|id| latest.remove(&id)).collect()
}

pub fn read_summaries(path: &Path) -> Result<Vec<CellSummary>> {
    Ok(summaries(&read_results(path)?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub planned: usize,
    /// Cells already complete in the results file.
    pub skipped: usize,
    pub ran: usize,
    pub failed: usize,
}

enum Message {
    Line(ResultLine),
    Done(CellSummary),
}

/// Runs every cell of `plan` not already complete in `results`, appending
/// to it. See [`run_sweep_with`].
pub fn run_sweep(plan: &SweepPlan, results: &Path, workers: usize) -> Result<SweepStats> {
    run_sweep_with(plan, results, workers, |_| {})
}

/// Fans pending cells out to `workers` threads. Workers send snapshot and
/// summary lines over a channel; this thread alone appends them to the
/// file, flushing after every line. A cell that errors or panics is
/// recorded as `failed` and the sweep continues. `on_done` sees each
/// finished cell.
pub fn run_sweep_with(
    plan: &SweepPlan,
    results: &Path,
    workers: usize,
    mut on_done: impl FnMut(&CellSummary),
) -> Result<SweepStats> {
    plan.validate()?;
    let complete: HashSet<_> = read_summaries(results)?
        .into_iter()
        .filter(|s| s.status != RunStatus::Failed)
        .map(|s| s.cell.id())
        .collect();
    let cells = plan.cells();
    let pending: Vec<CellKey> = cells.iter().copied().filter(|c| !complete.contains(&c.id())).collect();
    let mut stats = SweepStats { planned: cells.len(), skipped: cells.len() - pending.len(), ..Default::default() };
    if pending.is_empty() {
        return Ok(stats);
    }
    if let Some(dir) = results.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = OpenOptions::new().create(true).read(true).append(true).open(results)?;
    drop_partial_line(&mut file)?;

    let (job_tx, job_rx) = unbounded::<CellKey>();
    let (msg_tx, msg_rx) = unbounded::<Message>();
    for c in &pending {
        job_tx.send(*c).expect("receiver alive");
    }
    drop(job_tx);

    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers.max(1).min(pending.len()) {
            let (jobs, out) = (job_rx.clone(), msg_tx.clone());
            scope.spawn(move || {
                for cell in jobs.iter() {
                    let summary = run_cell(plan, cell, &out);
                    if out.send(Message::Done(summary)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(msg_tx);
        for msg in msg_rx.iter() {
            let line = match msg {
                Message::Line(l) => l,
                Message::Done(s) => {
                    stats.ran += 1;
                    if s.status == RunStatus::Failed {
                        stats.failed += 1;
                    }
                    on_done(&s);
                    ResultLine::Summary(s)
                }
            };
            let mut text = serde_json::to_string(&line)?;
            text.push('\n');
            file.write_all(text.as_bytes())?;
            file.flush()?;
        }
        Ok(())
    })?;
    Ok(stats)
}

/// Cuts an interrupted final line so appends start on a line boundary.
fn drop_partial_line(file: &mut File) -> Result<()> {
    let mut text = Vec::new();
    file.seek(SeekFrom::Start(0))?;
    std::io::Read::read_to_end(file, &mut text)?;
    if text.last().is_some_and(|&b| b != b'\n') {
        let keep = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        file.set_len(keep as u64)?;
    }
    Ok(())
}

fn run_cell(plan: &SweepPlan, cell: CellKey, out: &crossbeam_channel::Sender<Message>) -> CellSummary {
    let cfg = plan.run_config(&cell);
    let send = |s: &Snapshot| {
        let _ = out.send(Message::Line(ResultLine::Snapshot { cell, snapshot: s.clone() }));
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| match cfg.precision {
        Precision::F32 => train_run_with(&cfg, |_: &Trainer<f32>, s| send(s)),
        Precision::F64 => train_run_with(&cfg, |_: &Trainer<f64>, s| send(s)),
    }));
    match outcome {
        Ok(Ok(rec)) => CellSummary::from_record(cell, &rec),
        Ok(Err(e)) => CellSummary::failed(cell, cfg, e.to_string()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "worker panicked".into());
            CellSummary::failed(cell, cfg, format!("panic: {msg}"))
        }
    }
}
