//! Acceptance checks, one PASS/FAIL line each.
//!
//! `cargo test --test acceptance` runs all of them; passing numbers after
//! `--` selects a subset. Training sweeps (6-8) cache their JSONL results in
//! `$NAPOOL_ACCEPTANCE_DIR` (default `target/tmp/acceptance-runs`) and
//! resume from there, so only the first invocation pays for training.
//! Failing checks are reported, not fatal: the process exits nonzero only
//! when a check cannot be evaluated at all.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod common;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use napool::analysis::{
    scaling_probe, xor_convex_falsifier, xor_normalized_demo, Aggregator, DEFAULT_DH, DEFAULT_SAMPLES, XOR_TABLE,
};
use napool::archzoo::{forward, pool, ArchKind, Ctx, HeadKind, Model, ModelConfig, Precision};
use napool::gradcore::{grad_check_many, Graph, Tensor, Var, NORM_EPS};
use napool::harness::{
    aggregate_best, channel_byte, read_summaries, render_grid, run_sweep, run_sweep_with, AxisParam, CellKey, CellStats,
    Metric, Overrides, SweepPlan,
};
use napool::rng::{rng_from_seed, Rng};
use napool::taskgen::{gen_case_batch, gen_case_conditional, CaseLabel, TaskKind, TaskSpec};
use napool::trainer::{train_run, RunConfig, RunStatus, TrainConfig};
use napool::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

fn cache_dir() -> PathBuf {
    std::env::var_os("NAPOOL_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-runs"))
}

// ---------------------------------------------------------------- 1: gradients

const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

/// Contracts `out` with fixed random weights into a scalar objective.
fn contract(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let w = g.constant(randn(g.shape(out), &mut rng_from_seed(seed)));
    let p = g.mul(out, w)?;
    Ok(g.sum_all(p))
}

type OpCase = fn(&mut Graph<f64>, &[Var], u64) -> Result<Var>;

/// Every differentiable op with the input shapes it is checked at.
fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpCase)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |g, v, s| {
            let y = g.matmul(v[0], v[1])?;
            contract(g, y, s)
        }),
        ("bmm", vec![vec![2, 3, 4], vec![2, 4, 3]], |g, v, s| {
            let y = g.bmm(v[0], v[1], false)?;
            contract(g, y, s)
        }),
        ("bmm_transposed", vec![vec![2, 3, 4], vec![2, 5, 4]], |g, v, s| {
            let y = g.bmm(v[0], v[1], true)?;
            contract(g, y, s)
        }),
        ("affine", vec![vec![2, 3, 4], vec![4, 3], vec![3]], |g, v, s| {
            let y = g.affine(v[0], v[1], v[2])?;
            contract(g, y, s)
        }),
        ("add", vec![vec![3, 4], vec![3, 4]], |g, v, s| {
            let y = g.add(v[0], v[1])?;
            contract(g, y, s)
        }),
        ("mul", vec![vec![3, 4], vec![3, 4]], |g, v, s| {
            let y = g.mul(v[0], v[1])?;
            contract(g, y, s)
        }),
        ("scale", vec![vec![5]], |g, v, s| {
            let y = g.scale(v[0], -1.7);
            contract(g, y, s)
        }),
        ("reshape", vec![vec![2, 6]], |g, v, s| {
            let y = g.reshape(v[0], &[3, 4])?;
            let y = g.mul(y, y)?;
            contract(g, y, s)
        }),
        ("concat_lastdim", vec![vec![3, 2], vec![3, 4]], |g, v, s| {
            let y = g.concat_lastdim(v)?;
            let y = g.mul(y, y)?;
            contract(g, y, s)
        }),
        ("split_heads/merge_heads", vec![vec![2, 3, 6]], |g, v, s| {
            let h = g.split_heads(v[0], 3)?;
            let h = g.mul(h, h)?;
            let y = g.merge_heads(h)?;
            contract(g, y, s)
        }),
        ("transpose_last2", vec![vec![2, 3, 4]], |g, v, s| {
            let y = g.transpose_last2(v[0])?;
            let y = g.mul(y, y)?;
            contract(g, y, s)
        }),
        ("reduce_sum", vec![vec![2, 4, 3]], |g, v, s| {
            let y = g.reduce_sum(v[0], 1)?;
            let y = g.mul(y, y)?;
            contract(g, y, s)
        }),
        ("reduce_mean", vec![vec![2, 4, 3]], |g, v, s| {
            let y = g.reduce_mean(v[0], 2)?;
            let y = g.mul(y, y)?;
            contract(g, y, s)
        }),
        ("reduce_max", vec![vec![2, 4, 3]], |g, v, s| {
            let y = g.reduce_max(v[0], 1)?;
            contract(g, y, s)
        }),
        ("broadcast_over_axis", vec![vec![2, 3]], |g, v, s| {
            let y = g.broadcast_over_axis(v[0], 1, 4)?;
            let y = g.mul(y, y)?;
            contract(g, y, s)
        }),
        ("softmax_lastdim", vec![vec![3, 5]], |g, v, s| {
            let y = g.softmax_lastdim(v[0])?;
            contract(g, y, s)
        }),
        ("layer_norm", vec![vec![3, 5], vec![5], vec![5]], |g, v, s| {
            let y = g.layer_norm(v[0], v[1], v[2], NORM_EPS)?;
            contract(g, y, s)
        }),
        ("seq_normalize", vec![vec![3, 5], vec![1], vec![1]], |g, v, s| {
            let y = g.seq_normalize(v[0], v[1], v[2], NORM_EPS)?;
            contract(g, y, s)
        }),
        ("seq_normalize_grouped", vec![vec![2, 3, 4, 4], vec![3], vec![3]], |g, v, s| {
            let y = g.seq_normalize_grouped(v[0], v[1], v[2], NORM_EPS, 1)?;
            contract(g, y, s)
        }),
        ("gelu", vec![vec![12]], |g, v, s| {
            let y = g.gelu(v[0]);
            contract(g, y, s)
        }),
        ("dropout (fixed mask)", vec![vec![12]], |g, v, s| {
            let y = g.dropout(v[0], 0.3, &mut rng_from_seed(s ^ 1))?;
            contract(g, y, s)
        }),
        ("gather_rows", vec![vec![5, 3]], |g, v, s| {
            let y = g.gather_rows(v[0], &[4, 0, 4, 2])?;
            let y = g.mul(y, y)?;
            contract(g, y, s)
        }),
        ("select_index", vec![vec![2, 3, 4]], |g, v, s| {
            let y = g.select_index(v[0], 1, 2)?;
            let y = g.mul(y, y)?;
            contract(g, y, s)
        }),
        ("slice_lastdim", vec![vec![3, 5]], |g, v, s| {
            let y = g.slice_lastdim(v[0], 1, 4)?;
            let y = g.mul(y, y)?;
            contract(g, y, s)
        }),
        ("cross_entropy_from_logits", vec![vec![4, 5]], |g, v, _| g.cross_entropy_from_logits(v[0], &[0, 4, 2, 2])),
        ("sum_all", vec![vec![3, 3]], |g, v, _| {
            let y = g.mul(v[0], v[0])?;
            Ok(g.sum_all(y))
        }),
    ]
}

/// Parameters replaced by unit-scale noise so every nonlinearity is active.
fn noisy_params(model: &Model<f64>, rng: &mut Rng) -> Vec<Tensor<f64>> {
    model
        .names()
        .iter()
        .zip(model.params())
        .map(|(name, t)| {
            let base = if name.ends_with(".gain") { 1.0 } else { 0.0 };
            let z = randn(t.shape(), rng);
            Tensor::new(t.shape().to_vec(), z.data().iter().map(|v| base + 0.5 * v).collect()).unwrap()
        })
        .collect()
}

fn gradient_correctness() -> Result<Outcome> {
    let mut rng = rng_from_seed(1);
    let mut worst_op = ("", 0.0f64);
    for (name, shapes, f) in op_cases() {
        for trial in 0..5u64 {
            let ins: Vec<_> = shapes.iter().map(|s| randn(s, &mut rng)).collect();
            let err = grad_check_many(|g, v| f(g, v, trial), &ins, FD_STEP)?;
            if err > worst_op.1 {
                worst_op = (name, err);
            }
        }
    }
    let mut worst_arch = (String::new(), 0.0f64);
    for kind in ArchKind::ALL {
        for head in [HeadKind::PerToken, HeadKind::FirstToken, HeadKind::Mode] {
            let arch = napool::archzoo::ArchVariant::of(kind);
            let mut c = ModelConfig::new(arch, 4, 3, 5, head);
            c.heads = 2;
            c.layers = 1;
            let model: Model<f64> = Model::build(&c, &mut rng)?;
            let params = noisy_params(&model, &mut rng);
            let tokens: Vec<usize> = (0..6).map(|_| rng.gen_range(0..5)).collect();
            let targets: Vec<usize> = (0..2).map(|_| rng.gen_range(0..3)).collect();
            let err = grad_check_many(
                |g, vars| {
                    let mut ctx = Ctx { model: &model, vars, dropout: None };
                    let y = forward(&mut ctx, g, &tokens, 2, 3)?;
                    g.cross_entropy_from_logits(y, &targets)
                },
                &params,
                FD_STEP,
            )?;
            if err > worst_arch.1 {
                worst_arch = (format!("{arch}/{head:?}"), err);
            }
        }
    }
    let n_ops = op_cases().len();
    outcome(
        worst_op.1 < GRAD_TOL && worst_arch.1 < GRAD_TOL,
        format!(
            "{n_ops} ops worst {:.2e} ({}), 6 architectures x 3 heads worst {:.2e} ({}), tol {GRAD_TOL:e}",
            worst_op.1, worst_op.0, worst_arch.1, worst_arch.0
        ),
    )
}

// ---------------------------------------------------------------- 2: xor

fn xor_separation() -> Result<Outcome> {
    let r = xor_convex_falsifier();
    // Oracle: with a1 + a2 = 1 the (1, 1) row always evaluates to 1, so no
    // convex weighting gets below error 1 there, and a1 = 0.5 attains it.
    let contradiction = r.midpoint_at_11 == 1.0 && r.projection_at_01 == 0.0;
    let infeasible = r.min_max_error >= 0.5 && (r.min_max_error - 1.0).abs() < 1e-12;
    let mut normalized_ok = true;
    for ((x1, x2), y) in XOR_TABLE {
        normalized_ok &= xor_normalized_demo(x1, x2)? == y as f64;
    }
    outcome(
        contradiction && infeasible && normalized_ok,
        format!(
            "convex (1,1) -> {} (xor 0); brute-force min max error {} over {} weights (>= 0.5; exact bound 1); \
             normalized weighting exact on 4/4 rows: {normalized_ok}",
            r.midpoint_at_11, r.min_max_error, r.grid_points
        ),
    )
}

// ---------------------------------------------------------------- 3: scaling

/// Plotted sigma series at N = 1, 16, 256, 2048.
const PLOTTED_SIGMA: [(Aggregator, [f64; 4]); 5] = [
    (Aggregator::Attention, [1.00111916468965, 0.363615598626218, 0.102255732762415, 0.0363392737206586]),
    (Aggregator::Mean, [1.00111916468965, 0.249904639230572, 0.0630432674286595, 0.0218744970615453]),
    (Aggregator::Sum, [1.00111916468965, 3.99847422768915, 16.1390764617368, 44.7989699820447]),
    (Aggregator::Max, [1.00111916468965, 0.543863553185331, 0.391039817422694, 0.327306233769]),
    (Aggregator::Normalized, [0.99899222244216, 0.999747523031338, 0.999937535056977, 0.999977414608136]),
];
const PLOTTED_NORMALIZED_NORM: f64 = 11.3134529744294;
const PROBE_NS: [usize; 4] = [1, 16, 256, 2048];

fn output_scale_reproduction() -> Result<Outcome> {
    let mut misses = Vec::new();
    let mut checked = 0;
    let mut worst = (String::new(), 0.0f64);
    for (agg, plotted) in PLOTTED_SIGMA {
        let report = scaling_probe(agg, &PROBE_NS, DEFAULT_DH, DEFAULT_SAMPLES, &mut rng_from_seed(0))?;
        for (n, want) in PROBE_NS.iter().zip(plotted) {
            let e = report.entry(*n).expect("probed length");
            let rel = e.sigma / want - 1.0;
            checked += 1;
            if rel.abs() > worst.1 {
                worst = (format!("{agg} N={n}"), rel.abs());
            }
            if rel.abs() > 0.03 {
                misses.push(format!("{agg} sigma({n}) {:.4} vs {want:.4} ({:+.1}%)", e.sigma, 100.0 * rel));
            }
            if agg == Aggregator::Normalized {
                let r = e.mean_norm / PLOTTED_NORMALIZED_NORM - 1.0;
                checked += 1;
                if r.abs() > 0.002 {
                    misses.push(format!("normalized norm({n}) {:.4} ({:+.2}%)", e.mean_norm, 100.0 * r));
                }
            }
        }
    }
    let detail = if misses.is_empty() {
        format!("{checked}/{checked} values within tolerance; worst {} at {:.2}%", worst.0, 100.0 * worst.1)
    } else {
        format!("{} of {checked} values outside tolerance: {}", misses.len(), misses.join("; "))
    };
    outcome(misses.is_empty(), detail)
}

// ---------------------------------------------------------------- 4: generators

const PLOTTED_CASE_FREQ: [f64; 3] = [0.7238, 0.2009, 0.0753];

/// Independent case rule: any 64 is argmin, else any 50 is first, else argmax.
fn case_index(tokens: &[usize]) -> usize {
    if tokens.contains(&64) {
        0
    } else if tokens.contains(&50) {
        1
    } else {
        2
    }
}

fn generator_bias() -> Result<Outcome> {
    let mut rng = rng_from_seed(4);
    let mut counts = [0usize; 3];
    let total = 1_000_000;
    for _ in 0..total / 10_000 {
        for e in gen_case_batch(100, 128, 10_000, &mut rng) {
            counts[case_index(&e.tokens)] += 1;
        }
    }
    let freq = counts.map(|c| c as f64 / total as f64);
    let freq_ok = freq.iter().zip(PLOTTED_CASE_FREQ).all(|(f, p)| (f - p).abs() <= 0.003);

    // conditional generators at N = 2 against every sequence of that case
    let (s, per_case) = (66, 200_000);
    let mut p_values = Vec::new();
    for (ci, case) in CaseLabel::ALL.into_iter().enumerate() {
        let support: Vec<[usize; 2]> =
            (0..s).flat_map(|a| (0..s).map(move |b| [a, b])).filter(|t| case_index(t) == ci).collect();
        let mut seen: HashMap<[usize; 2], usize> = HashMap::new();
        for e in gen_case_conditional(case, s, 2, per_case, &mut rng)? {
            let key = [e.tokens[0], e.tokens[1]];
            if case_index(&key) != ci {
                return outcome(false, format!("{case} generator produced {key:?}"));
            }
            *seen.entry(key).or_default() += 1;
        }
        let expected = per_case as f64 / support.len() as f64;
        let stat: f64 = support
            .iter()
            .map(|k| {
                let o = *seen.get(k).unwrap_or(&0) as f64;
                (o - expected).powi(2) / expected
            })
            .sum();
        let dist = ChiSquared::new((support.len() - 1) as f64).expect("positive dof");
        p_values.push((case, 1.0 - dist.cdf(stat)));
    }
    let chi_ok = p_values.iter().all(|&(_, p)| p > 0.01);
    let ps: Vec<String> = p_values.iter().map(|(c, p)| format!("{c} p={p:.3}")).collect();
    outcome(
        freq_ok && chi_ok,
        format!(
            "frequencies ({:.4}, {:.4}, {:.4}) vs (0.7238, 0.2009, 0.0753) +-0.003; chi-square at S={s}, N=2: {}",
            freq[0],
            freq[1],
            freq[2],
            ps.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 5: convex hull

/// Largest amount by which a pooled coordinate leaves the range of the
/// value column it was pooled from.
fn hull_excess(kind: ArchKind, logits: &[f64], values: &[f64], n: usize, dh: usize) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(Tensor::from_f64_shaped(&[1, 1, n, n], logits)?);
    let v = g.constant(Tensor::from_f64_shaped(&[1, 1, n, dh], values)?);
    let nap = if kind == ArchKind::Nap {
        Some((g.constant(Tensor::full(&[1], 1.0)), g.constant(Tensor::zeros(&[1]))))
    } else {
        None
    };
    let out = pool(&mut g, kind, Some(l), v, nap)?;
    let out = g.value(out).to_f64_vec();
    let mut worst = f64::NEG_INFINITY;
    for c in 0..dh {
        let col: Vec<f64> = (0..n).map(|j| values[j * dh + c]).collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..n {
            let y = out[i * dh + c];
            worst = worst.max(lo - y).max(y - hi);
        }
    }
    Ok(worst)
}

fn convex_hull_invariant() -> Result<Outcome> {
    let mut rng = rng_from_seed(5);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let (n, dh) = (rng.gen_range(1..=8), rng.gen_range(1..=4));
        let scale: f64 = rng.gen_range(0.1..30.0);
        let logits: Vec<f64> = randn(&[n * n], &mut rng).data().iter().map(|x| x * scale).collect();
        let values = randn(&[n * dh], &mut rng).into_data();
        worst = worst.max(hull_excess(ArchKind::Mte, &logits, &values, n, dh)?);
    }
    // logits (1, 0) standardize to weights (1, -1): values (1, 2) pool to -1
    let nap = hull_excess(ArchKind::Nap, &[1.0, 0.0, 1.0, 0.0], &[1.0, 2.0], 2, 1)?;
    outcome(
        worst <= 1e-9 && nap > 1e-9,
        format!("softmax worst excess {worst:.2e} over 10^4 poolings (slack 1e-9); nap regression input excess {nap:.3}"),
    )
}

// ---------------------------------------------------------------- 6-8: training

/// d = 128, N = 128, L = 2, M = 4, T = 3200, batch 32, three learning rates
/// and two seeds per architecture.
fn reduced_plan(task: TaskSpec, archs: &[&str]) -> SweepPlan {
    SweepPlan {
        seed: 0,
        task,
        archs: archs.iter().map(|a| a.parse().unwrap()).collect(),
        axis: AxisParam::D,
        values: vec![128],
        lrs: vec![3e-4, 1e-3, 3e-3],
        seeds: 2,
        d: 128,
        heads: 4,
        layers: 2,
        precision: Precision::F32,
        overrides: Overrides { steps: Some(3200), eval_batches: 8, per_case_count: 0, ..Overrides::default() },
    }
}

/// Set when checks 6-8 may train: they were named on the command line or
/// `NAPOOL_ACCEPTANCE_TRAIN` is set. Otherwise they only read the cache,
/// since a cold cache means most of a day on one core.
static TRAIN: AtomicBool = AtomicBool::new(false);

/// Cached results of one reduced sweep.
struct Best {
    /// Best seed-mean per architecture over learning rates whose seeds have
    /// all finished; `None` while no learning rate is complete.
    by_arch: Vec<Option<CellStats>>,
    done: usize,
    total: usize,
}

impl Best {
    fn complete(&self) -> bool {
        self.done == self.total
    }
}

/// Reads the sweep cache, training whatever it lacks when allowed.
fn best_by_arch(name: &str, plan: &SweepPlan) -> Result<Best> {
    let path = cache_dir().join(format!("{name}.jsonl"));
    if TRAIN.load(Ordering::Relaxed) {
        let started = Instant::now();
        let stats = run_sweep_with(plan, &path, 1, |s| {
            eprintln!(
                "  [{name}] {} {:?} train {:.4} val {:.4} ({:.0} s)",
                s.cell,
                s.status,
                s.summary.train_acc,
                s.summary.val_acc,
                started.elapsed().as_secs_f64()
            );
        })?;
        if stats.failed > 0 {
            return Err(napool::Error::Runtime(format!("{} training cells failed", stats.failed)));
        }
    }
    let all = if path.exists() { read_summaries(&path)? } else { Vec::new() };
    let finished = |c: &CellKey| all.iter().any(|s| s.cell == *c && s.status != RunStatus::Failed);
    let cells = plan.cells();
    let done = cells.iter().filter(|c| finished(c)).count();
    let mut by_arch = Vec::new();
    for arch in &plan.archs {
        // a learning rate counts only once every seed has a summary
        let full: Vec<f64> = plan
            .lrs
            .iter()
            .copied()
            .filter(|&lr| cells.iter().filter(|c| c.arch == *arch && c.lr == lr).all(finished))
            .collect();
        let recs: Vec<_> = all
            .iter()
            .filter(|s| s.cell.arch == *arch && s.cell.x == 128 && full.contains(&s.cell.lr))
            .cloned()
            .collect();
        by_arch.push(if recs.is_empty() { None } else { Some(aggregate_best(&recs, Metric::Train)?) });
    }
    Ok(Best { by_arch, done, total: cells.len() })
}

fn not_evaluated(best: &Best) -> Result<Outcome> {
    outcome(
        false,
        format!(
            "not evaluated: {}/{} runs cached; rerun with NAPOOL_ACCEPTANCE_TRAIN=1 or name the check to train",
            best.done, best.total
        ),
    )
}

fn describe(arch: &str, b: &CellStats) -> String {
    format!("{arch} {:.3} (lr {:e}, seeds {:.3}..{:.3})", b.mean, b.lr, b.min, b.max)
}

fn case_task_end_to_end() -> Result<Outcome> {
    let plan = reduced_plan(TaskSpec { kind: TaskKind::Case, n: 128, vocab: 100 }, &["nap"]);
    let best = best_by_arch("case-nap", &plan)?;
    // the best over learning rates only grows as runs finish, so a lower
    // bound already past the threshold decides the check
    match &best.by_arch[0] {
        Some(b) if b.mean >= 0.95 || best.complete() => outcome(
            b.mean >= 0.95,
            format!("best mean train acc {} >= 0.95 ({}/{} runs)", describe("nap", b), best.done, best.total),
        ),
        _ => not_evaluated(&best),
    }
}

fn first_token_bottleneck() -> Result<Outcome> {
    let plan = reduced_plan(TaskSpec { kind: TaskKind::FirstToken, n: 128, vocab: 100 }, &["nap", "sum"]);
    let best = best_by_arch("first-token-nap-sum", &plan)?;
    let (Some(nap), Some(sum), true) = (&best.by_arch[0], &best.by_arch[1], best.complete()) else {
        return not_evaluated(&best);
    };
    outcome(
        nap.mean >= 0.85 && sum.mean <= 0.35,
        format!("{} >= 0.85, {} <= 0.35", describe("nap", nap), describe("sum", sum)),
    )
}

fn mode_prior_reversal() -> Result<Outcome> {
    let plan = reduced_plan(TaskSpec { kind: TaskKind::Mode, n: 128, vocab: 10 }, &["sum", "max"]);
    let best = best_by_arch("mode-sum-max", &plan)?;
    let (Some(sum), Some(max), true) = (&best.by_arch[0], &best.by_arch[1], best.complete()) else {
        return not_evaluated(&best);
    };
    outcome(
        sum.mean >= 0.90 && max.mean <= 0.30,
        format!("{} >= 0.90, {} <= 0.30", describe("sum", sum), describe("max", max)),
    )
}

// ---------------------------------------------------------------- 9: renderer

fn renderer_determinism() -> Result<Outcome> {
    let spec = common::golden_spec();
    let a = render_grid(&common::golden_records(), &spec)?.to_ppm();
    let b = render_grid(&common::golden_records(), &spec)?.to_ppm();
    let golden = std::fs::read(common::GOLDEN_PPM)?;
    let spots = [channel_byte(0.0), channel_byte(0.5), channel_byte(1.0)];
    outcome(
        a == b && a == golden && spots == [0, 128, 255],
        format!("golden PPM {} bytes equal: {}; mapping (0, 0.5, 1) -> {spots:?}", golden.len(), a == golden),
    )
}

// ---------------------------------------------------------------- 10: determinism

fn determinism() -> Result<Outcome> {
    let mut same_records = true;
    for precision in [Precision::F64, Precision::F32] {
        let mut train = TrainConfig::new(3e-3);
        train.steps = 60;
        train.eval_interval = 20;
        train.eval_batches = 2;
        train.per_case_count = 50;
        train.dropout = 0.1;
        train.seed = 17;
        let mut cfg = RunConfig::new("nap".parse()?, TaskSpec { kind: TaskKind::Case, n: 12, vocab: 80 }, 16, train);
        cfg.heads = 2;
        cfg.precision = precision;
        let (a, b) = (train_run(&cfg)?, train_run(&cfg)?);
        same_records &= a == b && serde_json::to_string(&a)? == serde_json::to_string(&b)?;
    }

    let plan = SweepPlan::from_json(
        r#"{"seed": 3, "task": {"kind": "mode", "n": 8, "vocab": 6}, "archs": ["sum", "mte"], "axis": "d",
            "values": [8], "lrs": [1e-3, 1e-2], "seeds": 2, "heads": 2, "layers": 1, "precision": "f32",
            "overrides": {"steps": 30, "eval_interval": 10, "eval_batches": 1}}"#,
    )?;
    let dir = tempfile::tempdir()?;
    let mut runs = Vec::new();
    for (i, workers) in [1, 3].into_iter().enumerate() {
        let path = dir.path().join(format!("{i}.jsonl"));
        run_sweep(&plan, &path, workers)?;
        let mut s = read_summaries(&path)?;
        s.sort_by_key(|x| x.cell.id());
        runs.push(s);
    }
    let same_sweeps = runs[0] == runs[1] && runs[0].len() == 8;
    outcome(
        same_records && same_sweeps,
        format!("repeated runs (f64, f32) bitwise equal: {same_records}; sweeps with 1 and 3 workers equal: {same_sweeps}"),
    )
}

// ---------------------------------------------------------------- driver

type Check = fn() -> Result<Outcome>;

const CHECKS: &[(usize, &str, Check)] = &[
    (1, "gradient correctness", gradient_correctness),
    (2, "xor separation", xor_separation),
    (3, "output-scale reproduction", output_scale_reproduction),
    (4, "generator bias", generator_bias),
    (5, "convex-hull invariant", convex_hull_invariant),
    (6, "case task end-to-end", case_task_end_to_end),
    (7, "first-token bottleneck", first_token_bottleneck),
    (8, "mode task prior reversal", mode_prior_reversal),
    (9, "renderer determinism", renderer_determinism),
    (10, "determinism", determinism),
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let named = selected.iter().any(|id| (6..=8).contains(id));
    TRAIN.store(named || std::env::var_os("NAPOOL_ACCEPTANCE_TRAIN").is_some(), Ordering::Relaxed);
    let (mut passed, mut failed, mut broken) = (0, 0, 0);
    for &(id, name, check) in CHECKS {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let secs = || t.elapsed().as_secs_f64();
        match check() {
            Ok(o) => {
                let tag = if o.pass { "PASS" } else { "FAIL" };
                if o.pass {
                    passed += 1;
                } else {
                    failed += 1;
                }
                println!("{tag} {id:>2} {name}: {} [{:.1} s]", o.detail, secs());
            }
            Err(e) => {
                broken += 1;
                println!("ERROR {id:>2} {name}: {e} [{:.1} s]", secs());
            }
        }
    }
    println!("acceptance: {passed} passed, {failed} failed, {broken} errors");
    if broken > 0 {
        std::process::exit(1);
    }
}
