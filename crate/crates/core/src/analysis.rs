//! Probes that need no training: how pooled outputs scale with sequence
//! length at initialization, and the two XOR results contrasting convex and
//! normalized weightings.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Graph, Tensor};
use crate::rng::{rng_from_seed, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    /// Softmax attention over random queries, keys and values.
    Attention,
    Mean,
    Sum,
    Max,
    /// Sum output standardized over the feature dimension.
    Normalized,
}

impl Aggregator {
    pub const ALL: [Aggregator; 5] =
        [Aggregator::Attention, Aggregator::Mean, Aggregator::Sum, Aggregator::Max, Aggregator::Normalized];

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Attention => "attention",
            Aggregator::Mean => "mean",
            Aggregator::Sum => "sum",
            Aggregator::Max => "max",
            Aggregator::Normalized => "normalized",
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aggregator::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown aggregator {s:?} (attention, mean, sum, max, normalized)")))
    }
}

/// Additive epsilon on the feature standard deviation of the normalized
/// series; it reproduces the slight shrinkage at short sequences
/// (N = 1 gives a norm of about 0.999 * sqrt(d_h)).
pub const FEATURE_NORM_EPS: f64 = 1e-3;

/// Sequence lengths probed by default.
pub const DEFAULT_NS: [usize; 12] = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048];
pub const DEFAULT_SAMPLES: usize = 16_384;
pub const DEFAULT_DH: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingEntry {
    pub n: usize,
    /// Standard deviation over all output scalars.
    pub sigma: f64,
    /// Mean Euclidean norm of the output vectors.
    pub mean_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub aggregator: Aggregator,
    pub d_h: usize,
    pub entries: Vec<ScalingEntry>,
}

impl ScalingReport {
    pub fn entry(&self, n: usize) -> Option<&ScalingEntry> {
        self.entries.iter().find(|e| e.n == n)
    }

    /// CSV rows `aggregator,N,sigma,mean_norm` (no header).
    pub fn csv_rows(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{},{},{},{}\n", self.aggregator, e.n, e.sigma, e.mean_norm))
            .collect()
    }
}

pub const CSV_HEADER: &str = "aggregator,N,sigma,mean_norm\n";

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Vec<f64> {
    (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect()
}

/// Output vectors (each `d_h` long, concatenated) for one sequence of
/// values `v` (`n x d_h`); attention additionally uses `q` and `k`.
fn pool_sequence(agg: Aggregator, v: &[f64], qk: Option<(&[f64], &[f64])>, n: usize, dh: usize) -> Result<Vec<f64>> {
    let column = |f: &dyn Fn(&mut dyn Iterator<Item = f64>) -> f64| -> Vec<f64> {
        (0..dh).map(|c| f(&mut (0..n).map(|j| v[j * dh + c]))).collect()
    };
    Ok(match agg {
        Aggregator::Sum => column(&|it| it.sum()),
        Aggregator::Mean => column(&|it| it.sum::<f64>() / n as f64),
        Aggregator::Max => column(&|it| it.fold(f64::NEG_INFINITY, f64::max)),
        Aggregator::Normalized => {
            let s = column(&|it| it.sum());
            let mu = s.iter().sum::<f64>() / dh as f64;
            let sd = (s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / dh as f64).sqrt();
            s.iter().map(|x| (x - mu) / (sd + FEATURE_NORM_EPS)).collect()
        }
        Aggregator::Attention => {
            let (q, k) = qk.ok_or_else(|| Error::Runtime("attention probe needs queries and keys".into()))?;
            let mut g = Graph::<f64>::new();
            let shape = [n, dh];
            let q = g.constant(Tensor::new(shape.to_vec(), q.to_vec())?);
            let k = g.constant(Tensor::new(shape.to_vec(), k.to_vec())?);
            let v = g.constant(Tensor::new(shape.to_vec(), v.to_vec())?);
            let l = crate::archzoo::attention_logits(&mut g, q, k)?;
            let o = crate::archzoo::pool(&mut g, crate::archzoo::ArchKind::Mte, Some(l), v, None)?;
            g.value(o).data().to_vec()
        }
    })
}

/// Pooled-output statistics at initialization for each sequence length.
///
/// For every `n`, `total_samples` standard-normal value vectors (then keys,
/// then queries, for attention) of dimension `d_h` are split into
/// `total_samples / n` sequences. Each length draws from its own stream
/// seeded from `rng`, so aggregators probed with equal seeds see the same
/// values.
pub fn scaling_probe(agg: Aggregator, ns: &[usize], d_h: usize, total_samples: usize, rng: &mut Rng) -> Result<ScalingReport> {
    if d_h == 0 {
        return Err(Error::config("d_h must be positive"));
    }
    let mut sorted = ns.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut entries = Vec::with_capacity(sorted.len());
    for &n in &sorted {
        let stream = rng.gen::<u64>();
        if n == 0 || total_samples == 0 || !total_samples.is_multiple_of(n) {
            return Err(Error::config(format!("{total_samples} samples cannot be split into sequences of length {n}")));
        }
        let mut r = rng_from_seed(stream);
        let v = gaussian(total_samples, d_h, &mut r);
        let qk = if agg == Aggregator::Attention {
            let k = gaussian(total_samples, d_h, &mut r);
            let q = gaussian(total_samples, d_h, &mut r);
            Some((q, k))
        } else {
            None
        };
        let (mut sum, mut sq, mut count, mut norms, mut vectors) = (0.0, 0.0, 0usize, 0.0, 0usize);
        let block = n * d_h;
        for s in 0..total_samples / n {
            let range = s * block..(s + 1) * block;
            let qk = qk.as_ref().map(|(q, k)| (&q[range.clone()], &k[range.clone()]));
            let out = pool_sequence(agg, &v[range], qk, n, d_h)?;
            for o in out.chunks(d_h) {
                norms += o.iter().map(|x| x * x).sum::<f64>().sqrt();
                vectors += 1;
            }
            sum += out.iter().sum::<f64>();
            sq += out.iter().map(|x| x * x).sum::<f64>();
            count += out.len();
        }
        let mean = sum / count as f64;
        entries.push(ScalingEntry {
            n,
            sigma: (sq / count as f64 - mean * mean).max(0.0).sqrt(),
            mean_norm: norms / vectors as f64,
        });
    }
    Ok(ScalingReport { aggregator: agg, d_h, entries })
}

/// Outcome of trying to express XOR as a convex combination `a1 x1 + a2 x2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexXorReport {
    /// Value at (1, 1) with weights (0.5, 0.5); XOR(1, 1) = 0.
    pub midpoint_at_11: f64,
    /// Value at (0, 1) with weights (1, 0); XOR(0, 1) = 1.
    pub projection_at_01: f64,
    /// Grid of `a1` values searched (with `a2 = 1 - a1`).
    pub grid_points: usize,
    /// Minimum over the grid of the maximum truth-table error.
    pub min_max_error: f64,
    /// Weight `a1` attaining that minimum.
    pub best_a1: f64,
}

pub const XOR_TABLE: [((u8, u8), u8); 4] = [((0, 0), 0), ((0, 1), 1), ((1, 0), 1), ((1, 1), 0)];

/// Max truth-table error of the weighting `(a1, 1 - a1)`.
fn convex_xor_error(a1: f64) -> f64 {
    let a2 = 1.0 - a1;
    XOR_TABLE
        .iter()
        .map(|&((x1, x2), y)| (a1 * x1 as f64 + a2 * x2 as f64 - y as f64).abs())
        .fold(0.0, f64::max)
}

/// Shows that no weights with `a1 + a2 = 1` reproduce XOR: at (1, 1) every
/// such combination returns 1. Grid-searches `a1` over `[-10, 10]` in steps
/// of 1e-3.
pub fn xor_convex_falsifier() -> ConvexXorReport {
    let points = 20_001;
    let (mut best, mut best_a1) = (f64::INFINITY, 0.0);
    for i in 0..points {
        let a1 = -10.0 + i as f64 * 1e-3;
        let e = convex_xor_error(a1);
        if e < best {
            best = e;
            best_a1 = a1;
        }
    }
    ConvexXorReport {
        midpoint_at_11: 0.5 + 0.5,
        projection_at_01: 1.0 * 0.0 + 0.0 * 1.0,
        grid_points: points,
        min_max_error: best,
        best_a1,
    }
}

/// Logits `[3 x1 + 1, 2 x2]`, their eps-free two-element standardization
/// (always `[1, -1]` or `[-1, 1]`), and the weighted sum `w1 x1 + w2 x2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedXor {
    pub logits: [f64; 2],
    pub weights: [f64; 2],
    pub output: f64,
}

pub fn xor_normalized_weighting(x1: u8, x2: u8) -> Result<NormalizedXor> {
    if x1 > 1 || x2 > 1 {
        return Err(Error::config(format!("xor inputs must be 0 or 1, got ({x1}, {x2})")));
    }
    let (a, b) = (x1 as f64, x2 as f64);
    let l = [3.0 * a + 1.0, 2.0 * b];
    if l[0] == l[1] {
        return Err(Error::Runtime("undefined normalization: equal logits".into()));
    }
    let mu = (l[0] + l[1]) / 2.0;
    // population std of two values is half their distance
    let sd = (l[0] - l[1]).abs() / 2.0;
    let w = [(l[0] - mu) / sd, (l[1] - mu) / sd];
    Ok(NormalizedXor { logits: l, weights: w, output: w[0] * a + w[1] * b })
}

/// Normalized weighting of `(x1, x2)`; equals XOR on the binary domain.
pub fn xor_normalized_demo(x1: u8, x2: u8) -> Result<f64> {
    xor_normalized_weighting(x1, x2).map(|r| r.output)
}
