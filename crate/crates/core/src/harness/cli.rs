//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 runtime failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    scaling_probe, xor_convex_falsifier, xor_normalized_weighting, Aggregator, CSV_HEADER, DEFAULT_DH, DEFAULT_NS,
    DEFAULT_SAMPLES, XOR_TABLE,
};
use crate::archzoo::{ArchVariant, Precision};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::taskgen::{gen_case_batch, gen_case_conditional, gen_mode_batch, CaseLabel, TaskKind};
use crate::trainer::{train_run_with, MetricRecord, RunConfig, Snapshot, Trainer};

use super::aggregate::{aggregate_best, by_arch, Metric};
use super::plan::{Preset, SweepPlan};
use super::render::{render_grid, ChannelMode, GridSpec};
use super::sweep::{read_summaries, run_sweep_with, CellSummary};

#[derive(Debug, Parser)]
#[command(name = "napool", version, about = "Train and probe sequence-pooling architectures")]
struct Cli {
    /// Experiment seed; overrides the seed in config and plan files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Floating-point precision; overrides config and plan files.
    #[arg(long, global = true)]
    precision: Option<Precision>,
    /// Output directory. `train`, `sweep` and `render` write here (default
    /// "."); `probe-scaling` and `dump-data` print to stdout unless it is set.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model from a JSON run config.
    Train {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Record file inside the output directory.
        #[arg(long, default_value = "train.jsonl")]
        output: String,
    },
    /// Run (or resume) a sweep, appending JSONL results.
    Sweep {
        #[command(flatten)]
        source: PlanSource,
        /// Worker threads (default: available cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Results file (default: <out>/<plan name>.jsonl).
        #[arg(long, value_name = "FILE")]
        results: Option<PathBuf>,
    },
    /// Print a preset plan as JSON, or validate a plan file.
    Plan {
        #[command(flatten)]
        source: PlanSource,
    },
    /// Output-scale statistics of aggregators over random inputs, as CSV.
    ProbeScaling {
        /// Aggregator; all of them when omitted.
        #[arg(long)]
        agg: Option<Aggregator>,
        #[arg(long, default_value_t = DEFAULT_DH)]
        dh: usize,
        /// Scalars drawn per sequence length.
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        /// Comma-separated sequence lengths.
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
    },
    /// Check XOR against convex and normalized two-token weightings.
    XorCheck,
    /// Render sweep results as an RGB accuracy grid (PPM or PNG).
    Render {
        #[arg(long, value_name = "FILE")]
        results: PathBuf,
        /// Architecture to draw; required when the results hold several.
        #[arg(long)]
        arch: Option<ArchVariant>,
        #[arg(long, default_value = "min_mean_max")]
        mode: ChannelMode,
        #[arg(long, default_value = "train")]
        metric: Metric,
        /// Pixels per cell side.
        #[arg(long, default_value_t = 8)]
        scale: usize,
        /// Grid axes from a plan; otherwise from --lrs/--xs or the records.
        #[command(flatten)]
        source: OptionalPlanSource,
        #[arg(long, value_delimiter = ',')]
        lrs: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        xs: Option<Vec<usize>>,
        /// Image file; `.png` selects PNG, anything else PPM.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Best (x, lr) cell per architecture.
    Aggregate {
        #[arg(long, value_name = "FILE")]
        results: PathBuf,
        #[arg(long, default_value = "validation")]
        metric: Metric,
    },
    /// Generate task sequences as JSONL.
    DumpData {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        vocab: usize,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Draw only sequences of one case (argmin, first, argmax).
        #[arg(long, value_parser = parse_case)]
        case: Option<CaseLabel>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct PlanSource {
    #[arg(long, value_name = "FILE")]
    plan: Option<PathBuf>,
    #[arg(long)]
    preset: Option<Preset>,
}

#[derive(Debug, Args)]
#[group(required = false, multiple = false)]
struct OptionalPlanSource {
    #[arg(long, value_name = "FILE")]
    plan: Option<PathBuf>,
    #[arg(long)]
    preset: Option<Preset>,
}

fn parse_case(s: &str) -> std::result::Result<CaseLabel, String> {
    CaseLabel::ALL
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| format!("unknown case {s:?} (argmin, first, argmax)"))
}

/// Parses `args` (program name first) and runs the command, writing to the
/// process's stdout and stderr.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr())
}

pub fn run_with<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().ansi().to_string();
            let _ = if code == 0 { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    match execute(cli, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_config() {
                1
            } else {
                2
            }
        }
    }
}

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))
}

fn out_dir(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn load_plan(plan: &Option<PathBuf>, preset: Option<Preset>) -> Result<Option<(SweepPlan, String)>> {
    match (plan, preset) {
        (Some(p), _) => {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sweep".into());
            Ok(Some((SweepPlan::from_json(&read_input(p)?)?, name)))
        }
        (None, Some(p)) => Ok(Some((p.plan(), p.name().to_string()))),
        (None, None) => Ok(None),
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Train { config, output } => {
            let mut cfg: RunConfig = serde_json::from_str(&read_input(config)?)?;
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            if let Some(p) = cli.precision {
                cfg.precision = p;
            }
            cfg.validate()?;
            let dir = out_dir(&cli.out);
            fs::create_dir_all(&dir)?;
            let mut progress = |s: &Snapshot| {
                let _ = writeln!(
                    stderr,
                    "step {:>6}  loss {:.4}  train {:.4}  val {:.4}",
                    s.step, s.loss, s.train_acc, s.val_acc
                );
            };
            let rec: MetricRecord = match cfg.precision {
                Precision::F32 => train_run_with(&cfg, |_: &Trainer<f32>, s| progress(s))?,
                Precision::F64 => train_run_with(&cfg, |_: &Trainer<f64>, s| progress(s))?,
            };
            let path = dir.join(output);
            let mut line = serde_json::to_string(&rec)?;
            line.push('\n');
            fs::OpenOptions::new().create(true).append(true).open(&path)?.write_all(line.as_bytes())?;
            writeln!(
                stdout,
                "{} {} params={} train_acc={:.4} val_acc={:.4} -> {}",
                cfg.arch,
                serde_json::to_string(&rec.status)?.trim_matches('"'),
                rec.param_count,
                rec.summary.train_acc,
                rec.summary.val_acc,
                path.display()
            )?;
            Ok(0)
        }
        Command::Sweep { source, workers, results } => {
            let (mut plan, name) = load_plan(&source.plan, source.preset)?.expect("clap requires a plan source");
            if let Some(s) = cli.seed {
                plan.seed = s;
            }
            if let Some(p) = cli.precision {
                plan.precision = p;
            }
            plan.validate()?;
            let path = results.clone().unwrap_or_else(|| out_dir(&cli.out).join(format!("{name}.jsonl")));
            let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let total = plan.cell_count();
            writeln!(stderr, "{total} cells planned, {workers} workers, results in {}", path.display())?;
            let mut done = 0;
            let stats = run_sweep_with(&plan, &path, workers, |s: &CellSummary| {
                done += 1;
                let _ = writeln!(
                    stderr,
                    "[{done}] {}: {:?} train {:.4} val {:.4}{}",
                    s.cell,
                    s.status,
                    s.summary.train_acc,
                    s.summary.val_acc,
                    s.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default()
                );
            })?;
            writeln!(
                stdout,
                "planned {} skipped {} ran {} failed {}",
                stats.planned, stats.skipped, stats.ran, stats.failed
            )?;
            Ok(if stats.failed > 0 { 2 } else { 0 })
        }
        Command::Plan { source } => {
            let (plan, _) = load_plan(&source.plan, source.preset)?.expect("clap requires a plan source");
            plan.validate()?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&plan)?)?;
            writeln!(stderr, "{} cells", plan.cell_count())?;
            Ok(0)
        }
        Command::ProbeScaling { agg, dh, samples, ns } => {
            let seed = cli.seed.unwrap_or(0);
            let ns = ns.clone().unwrap_or_else(|| DEFAULT_NS.to_vec());
            let aggs = agg.map_or_else(|| Aggregator::ALL.to_vec(), |a| vec![a]);
            let mut csv = String::from(CSV_HEADER);
            for a in aggs {
                csv.push_str(&scaling_probe(a, &ns, *dh, *samples, &mut rng_from_seed(seed))?.csv_rows());
            }
            emit(&cli.out, "scaling.csv", csv.as_bytes(), stdout)?;
            Ok(0)
        }
        Command::XorCheck => {
            let mut ok = true;
            writeln!(stdout, "x1 x2 xor  logits      weights     output")?;
            for ((x1, x2), y) in XOR_TABLE {
                let r = xor_normalized_weighting(x1, x2)?;
                ok &= r.output == y as f64;
                writeln!(
                    stdout,
                    " {x1}  {x2}   {y}   [{:>2}, {:>2}]    [{:>2}, {:>2}]    {}",
                    r.logits[0], r.logits[1], r.weights[0], r.weights[1], r.output
                )?;
            }
            let c = xor_convex_falsifier();
            writeln!(
                stdout,
                "convex weights: (1,1) -> {} at (0.5, 0.5); best max error {} over {} grid points (a1 = {})",
                c.midpoint_at_11, c.min_max_error, c.grid_points, c.best_a1
            )?;
            ok &= c.min_max_error >= 0.5;
            Ok(if ok { 0 } else { 2 })
        }
        Command::Render { results, arch, mode, metric, scale, source, lrs, xs, output } => {
            let all = read_summaries(results)?;
            let mut groups = by_arch(&all);
            let records = match arch {
                Some(a) => groups
                    .into_iter()
                    .find(|(g, _)| g == a)
                    .map(|(_, r)| r)
                    .ok_or_else(|| Error::config(format!("no records for architecture {a}")))?,
                None if groups.len() == 1 => groups.pop().unwrap().1,
                None if groups.is_empty() => return Err(Error::config("results file holds no summaries")),
                None => return Err(Error::config("results span several architectures; pass --arch")),
            };
            let (mut grid_lrs, mut grid_xs) = match load_plan(&source.plan, source.preset)? {
                Some((p, _)) => (p.lrs, p.values),
                None => (
                    records.iter().map(|r| r.cell.lr).collect::<Vec<_>>(),
                    records.iter().map(|r| r.cell.x).collect::<Vec<_>>(),
                ),
            };
            if let Some(l) = lrs {
                grid_lrs = l.clone();
            }
            if let Some(x) = xs {
                grid_xs = x.clone();
            }
            if source.plan.is_none() && source.preset.is_none() {
                grid_lrs.sort_by(|a, b| a.total_cmp(b));
                grid_lrs.dedup();
                grid_xs.sort_unstable();
                grid_xs.dedup();
            }
            let spec = GridSpec { mode: *mode, metric: *metric, upscale: *scale, lrs: grid_lrs, xs: grid_xs };
            let img = render_grid(&records, &spec)?;
            let name = records[0].cell.arch.to_string().replace('/', "-");
            let path = output.clone().unwrap_or_else(|| out_dir(&cli.out).join(format!("grid-{name}.ppm")));
            let bytes = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                img.to_png()?
            } else {
                img.to_ppm()
            };
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(&path, bytes)?;
            writeln!(stdout, "{}x{} grid -> {}", img.width, img.height, path.display())?;
            Ok(0)
        }
        Command::Aggregate { results, metric } => {
            let all = read_summaries(results)?;
            if all.is_empty() {
                return Err(Error::config("results file holds no summaries"));
            }
            writeln!(stdout, "arch\tx\tlr\tseeds\tmean\tmin\tmax")?;
            for (arch, recs) in by_arch(&all) {
                match aggregate_best(&recs, *metric) {
                    Ok(b) => writeln!(
                        stdout,
                        "{arch}\t{}\t{:e}\t{}\t{:.4}\t{:.4}\t{:.4}",
                        b.x, b.lr, b.seeds, b.mean, b.min, b.max
                    )?,
                    Err(e) => writeln!(stdout, "{arch}\t-\t-\t0\t-\t-\t-\t# {e}")?,
                }
            }
            Ok(0)
        }
        Command::DumpData { task, n, vocab, count, case } => {
            let mut rng = rng_from_seed(cli.seed.unwrap_or(0));
            let examples = match (task, case) {
                (TaskKind::Mode, Some(_)) => return Err(Error::config("--case applies to case tasks only")),
                (TaskKind::Mode, None) => gen_mode_batch(*vocab, *n, *count, &mut rng)?,
                (_, Some(c)) => gen_case_conditional(*c, *vocab, *n, *count, &mut rng)?,
                (_, None) => {
                    if *n == 0 || *vocab < 2 {
                        return Err(Error::config("need n >= 1 and vocab >= 2"));
                    }
                    gen_case_batch(*vocab, *n, *count, &mut rng)
                }
            };
            let mut text = String::new();
            for e in &examples {
                text.push_str(&serde_json::to_string(e)?);
                text.push('\n');
            }
            emit(&cli.out, "data.jsonl", text.as_bytes(), stdout)?;
            Ok(0)
        }
    }
}

/// Writes to `<dir>/<name>` when an output directory was given, else stdout.
fn emit(dir: &Option<PathBuf>, name: &str, bytes: &[u8], stdout: &mut dyn Write) -> Result<()> {
    match dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            fs::write(d.join(name), bytes)?;
        }
        None => stdout.write_all(bytes)?,
    }
    Ok(())
}
