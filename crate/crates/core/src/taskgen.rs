//! Synthetic sequence tasks.
//!
//! *Case distinction*: tokens are i.i.d. uniform over `[0, S)`. A sequence
//! containing token 64 asks for the position of its minimum; otherwise one
//! containing 50 asks for the first position; otherwise the position of its
//! maximum. Ties resolve to the first occurrence.
//!
//! *Mode finding*: the target is the most frequent token, the smallest one
//! on ties.

use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::archzoo::HeadKind;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Token that switches a sequence to the argmin case.
pub const ARGMIN_TRIGGER: usize = 64;
/// Token that switches a sequence (without the argmin trigger) to the first case.
pub const FIRST_TRIGGER: usize = 50;

/// Rejection samplers refuse to run below this expected acceptance rate.
const MIN_ACCEPTANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseLabel {
    Argmin,
    First,
    Argmax,
}

impl CaseLabel {
    pub const ALL: [CaseLabel; 3] = [CaseLabel::Argmin, CaseLabel::First, CaseLabel::Argmax];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CaseLabel::Argmin => "argmin",
            CaseLabel::First => "first",
            CaseLabel::Argmax => "argmax",
        }
    }
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    /// Position index (case tasks) or class id (mode task).
    pub target: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<CaseLabel>,
}

pub fn case_of(tokens: &[usize]) -> CaseLabel {
    if tokens.contains(&ARGMIN_TRIGGER) {
        CaseLabel::Argmin
    } else if tokens.contains(&FIRST_TRIGGER) {
        CaseLabel::First
    } else {
        CaseLabel::Argmax
    }
}

pub fn target_of(tokens: &[usize], case: CaseLabel) -> usize {
    let pick = |better: fn(usize, usize) -> bool| {
        let mut best = 0;
        for (i, &t) in tokens.iter().enumerate() {
            if better(t, tokens[best]) {
                best = i;
            }
        }
        best
    };
    match case {
        CaseLabel::Argmin => pick(|a, b| a < b),
        CaseLabel::First => 0,
        CaseLabel::Argmax => pick(|a, b| a > b),
    }
}

/// Closed-form case frequencies `(argmin, first, argmax)` under i.i.d.
/// uniform tokens.
pub fn case_probabilities(s: usize, n: usize) -> Result<(f64, f64, f64)> {
    if s < 2 {
        return Err(Error::config(format!("vocabulary size must be at least 2, got {s}")));
    }
    let (sf, n) = (s as f64, n as i32);
    let no_min = (1.0 - 1.0 / sf).powi(n);
    let p_min = 1.0 - no_min;
    let p_first = no_min * (1.0 - (1.0 - 1.0 / (sf - 1.0)).powi(n));
    Ok((p_min, p_first, 1.0 - p_min - p_first))
}

fn labelled(tokens: Vec<usize>) -> Example {
    let case = case_of(&tokens);
    Example { target: target_of(&tokens, case), case: Some(case), tokens }
}

pub fn gen_case_batch(s: usize, n: usize, batch: usize, rng: &mut Rng) -> Vec<Example> {
    (0..batch).map(|_| labelled((0..n).map(|_| rng.gen_range(0..s)).collect())).collect()
}

/// Uniform draw from `[0, s)` without the sorted `excluded` tokens.
fn draw_excluding(s: usize, excluded: &[usize], rng: &mut Rng) -> usize {
    let mut v = rng.gen_range(0..s - excluded.len());
    for &e in excluded {
        if v >= e {
            v += 1;
        }
    }
    v
}

/// Expected acceptance rate of the rejection step for `case`.
pub fn conditional_acceptance(case: CaseLabel, s: usize, n: usize) -> f64 {
    let n = n as i32;
    match case {
        CaseLabel::Argmin => 1.0 - (1.0 - 1.0 / s as f64).powi(n),
        CaseLabel::First => 1.0 - (1.0 - 1.0 / (s as f64 - 1.0)).powi(n),
        CaseLabel::Argmax => 1.0,
    }
}

/// Draws `count` examples from the exact distribution of the generator
/// conditioned on `case`. Also returns the number of candidate sequences
/// drawn (equal to `count` when no rejection happens).
pub fn gen_case_conditional_counted(
    case: CaseLabel,
    s: usize,
    n: usize,
    count: usize,
    rng: &mut Rng,
) -> Result<(Vec<Example>, u64)> {
    if s <= ARGMIN_TRIGGER {
        return Err(Error::config(format!(
            "conditional sampling needs a vocabulary above {ARGMIN_TRIGGER}, got {s}"
        )));
    }
    if n == 0 {
        return Err(Error::config("sequence length must be positive"));
    }
    let accept = conditional_acceptance(case, s, n);
    if accept < MIN_ACCEPTANCE {
        return Err(Error::config(format!(
            "{case} rejection sampling at S={s}, N={n} would accept only {accept:.2e} of draws; \
             plant the trigger token constructively instead"
        )));
    }
    let (excluded, required): (&[usize], Option<usize>) = match case {
        CaseLabel::Argmin => (&[], Some(ARGMIN_TRIGGER)),
        CaseLabel::First => (&[ARGMIN_TRIGGER], Some(FIRST_TRIGGER)),
        CaseLabel::Argmax => (&[FIRST_TRIGGER, ARGMIN_TRIGGER], None),
    };
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0u64;
    while out.len() < count {
        attempts += 1;
        let tokens: Vec<usize> = (0..n).map(|_| draw_excluding(s, excluded, rng)).collect();
        if required.is_none_or(|r| tokens.contains(&r)) {
            out.push(Example { target: target_of(&tokens, case), case: Some(case), tokens });
        }
    }
    Ok((out, attempts))
}

pub fn gen_case_conditional(case: CaseLabel, s: usize, n: usize, count: usize, rng: &mut Rng) -> Result<Vec<Example>> {
    gen_case_conditional_counted(case, s, n, count, rng).map(|(e, _)| e)
}

/// Most frequent token, smallest on ties.
pub fn mode_of(tokens: &[usize], s: usize) -> usize {
    let mut counts = vec![0usize; s];
    for &t in tokens {
        counts[t] += 1;
    }
    let mut best = 0;
    for (v, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = v;
        }
    }
    best
}

pub fn gen_mode_batch(s: usize, n: usize, batch: usize, rng: &mut Rng) -> Result<Vec<Example>> {
    if s < 2 {
        return Err(Error::config(format!("vocabulary size must be at least 2, got {s}")));
    }
    Ok((0..batch)
        .map(|_| {
            let tokens: Vec<usize> = (0..n).map(|_| rng.gen_range(0..s)).collect();
            Example { target: mode_of(&tokens, s), case: None, tokens }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Case distinction with one logit per position.
    Case,
    /// Case distinction answered from the position-0 embedding.
    FirstToken,
    /// Mode finding, without positional embeddings.
    Mode,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Case, TaskKind::FirstToken, TaskKind::Mode];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Case => "case",
            TaskKind::FirstToken => "first_token",
            TaskKind::Mode => "mode",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown task {s:?} (case, first_token, mode)")))
    }
}

/// Task plus the training sequence length and vocabulary size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Training sequence length.
    pub n: usize,
    /// Vocabulary size.
    pub vocab: usize,
}

impl TaskSpec {
    pub fn head(&self) -> HeadKind {
        match self.kind {
            TaskKind::Case => HeadKind::PerToken,
            TaskKind::FirstToken => HeadKind::FirstToken,
            TaskKind::Mode => HeadKind::Mode,
        }
    }

    pub fn positional(&self) -> bool {
        self.kind != TaskKind::Mode
    }

    pub fn has_cases(&self) -> bool {
        self.kind != TaskKind::Mode
    }

    /// Validation length: half the training length for case tasks, twice it
    /// for mode finding.
    pub fn n_val(&self) -> usize {
        match self.kind {
            TaskKind::Case | TaskKind::FirstToken => (self.n / 2).max(1),
            TaskKind::Mode => 2 * self.n,
        }
    }

    pub fn n_max(&self) -> usize {
        self.n.max(self.n_val())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("sequence length must be positive"));
        }
        if self.vocab < 2 {
            return Err(Error::config(format!("vocabulary size must be at least 2, got {}", self.vocab)));
        }
        Ok(())
    }

    /// Fresh batch of `batch` sequences of length `n`.
    pub fn batch(&self, n: usize, batch: usize, rng: &mut Rng) -> Result<Batch> {
        let examples = match self.kind {
            TaskKind::Case | TaskKind::FirstToken => gen_case_batch(self.vocab, n, batch, rng),
            TaskKind::Mode => gen_mode_batch(self.vocab, n, batch, rng)?,
        };
        Batch::from_examples(&examples)
    }
}

/// Examples of equal length packed row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub tokens: Vec<usize>,
    pub targets: Vec<usize>,
    pub cases: Vec<Option<CaseLabel>>,
    pub size: usize,
    pub n: usize,
}

impl Batch {
    pub fn from_examples(examples: &[Example]) -> Result<Batch> {
        let n = examples.first().ok_or(Error::EmptyInput("batch"))?.tokens.len();
        let mut b = Batch { tokens: Vec::new(), targets: Vec::new(), cases: Vec::new(), size: examples.len(), n };
        for e in examples {
            if e.tokens.len() != n {
                return Err(Error::ShapeMismatch { op: "batch", lhs: vec![n], rhs: vec![e.tokens.len()] });
            }
            b.tokens.extend_from_slice(&e.tokens);
            b.targets.push(e.target);
            b.cases.push(e.case);
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn case_examples() {
        assert_eq!(case_of(&[64, 3, 99, 0]), CaseLabel::Argmin);
        assert_eq!(case_of(&[1, 2, 50, 4]), CaseLabel::First);
        assert_eq!(case_of(&[1, 2, 3, 4]), CaseLabel::Argmax);
        assert_eq!(case_of(&[50, 64]), CaseLabel::Argmin);
    }

    #[test]
    fn target_examples() {
        assert_eq!(target_of(&[64, 3, 99, 0], CaseLabel::Argmin), 3);
        assert_eq!(target_of(&[1, 2, 50, 4], CaseLabel::First), 0);
        assert_eq!(target_of(&[7, 9, 9, 1], CaseLabel::Argmax), 1);
        assert_eq!(target_of(&[64, 0, 0], CaseLabel::Argmin), 1);
    }

    /// Case frequencies by enumerating every sequence in `[0, s)^n`.
    fn enumerate_frequencies(s: usize, n: usize) -> (f64, f64, f64) {
        let mut counts = [0u64; 3];
        let total = s.pow(n as u32);
        let mut tokens = vec![0; n];
        for mut code in 0..total {
            for t in tokens.iter_mut() {
                *t = code % s;
                code /= s;
            }
            counts[case_of(&tokens).index()] += 1;
        }
        let t = total as f64;
        (counts[0] as f64 / t, counts[1] as f64 / t, counts[2] as f64 / t)
    }

    #[test]
    fn closed_form_matches_enumeration() {
        for (s, n) in [(100, 1), (100, 2), (70, 3), (66, 4)] {
            let (a, b, c) = case_probabilities(s, n).unwrap();
            let (x, y, z) = enumerate_frequencies(s, n);
            assert!((a - x).abs() < 1e-12 && (b - y).abs() < 1e-12 && (c - z).abs() < 1e-12, "S={s} N={n}");
        }
        // a single token is the trigger 64 or 50 with probability 1/100 each
        let (a, b, c) = case_probabilities(100, 1).unwrap();
        assert!((a - 0.01).abs() < 1e-15 && (b - 0.01).abs() < 1e-15 && (c - 0.98).abs() < 1e-12);
    }

    #[test]
    fn canonical_frequencies() {
        let (a, b, c) = case_probabilities(100, 128).unwrap();
        assert!((a - 0.72377).abs() < 5e-5);
        assert!((b - 0.20093).abs() < 5e-5);
        assert!((c - 0.07531).abs() < 5e-5);
        assert_eq!(a + b + c, 1.0);
        assert!(case_probabilities(1, 3).unwrap_err().is_config());
    }

    #[test]
    fn empirical_frequencies_track_closed_form() {
        let mut rng = rng_from_seed(1);
        let mut counts = [0usize; 3];
        let total = 200_000;
        for _ in 0..total / 1000 {
            for e in gen_case_batch(100, 128, 1000, &mut rng) {
                counts[e.case.unwrap().index()] += 1;
                assert!(e.tokens.iter().all(|&t| t < 100));
            }
        }
        let (a, b, c) = case_probabilities(100, 128).unwrap();
        for (k, p) in [a, b, c].into_iter().enumerate() {
            assert!((counts[k] as f64 / total as f64 - p).abs() < 0.005);
        }
    }

    #[test]
    fn batches_are_deterministic() {
        let a = gen_case_batch(100, 16, 8, &mut rng_from_seed(4));
        let b = gen_case_batch(100, 16, 8, &mut rng_from_seed(4));
        assert_eq!(a, b);
        let c = gen_case_batch(100, 16, 8, &mut rng_from_seed(5));
        assert_ne!(a, c);
    }

    /// Chi-square p-value of conditional samples against the uniform
    /// distribution over all length-2 sequences of that case.
    fn conditional_p_value(case: CaseLabel, seed: u64) -> f64 {
        let s = 100;
        let support: Vec<(usize, usize)> = (0..s)
            .flat_map(|a| (0..s).map(move |b| (a, b)))
            .filter(|&(a, b)| case_of(&[a, b]) == case)
            .collect();
        let per_cell = 50;
        let samples = gen_case_conditional(case, s, 2, support.len() * per_cell, &mut rng_from_seed(seed)).unwrap();
        let mut counts = vec![0usize; s * s];
        for e in &samples {
            assert_eq!(case_of(&e.tokens), case);
            counts[e.tokens[0] * s + e.tokens[1]] += 1;
        }
        let expected = per_cell as f64;
        let stat: f64 = support.iter().map(|&(a, b)| (counts[a * s + b] as f64 - expected).powi(2) / expected).sum();
        1.0 - ChiSquared::new((support.len() - 1) as f64).unwrap().cdf(stat)
    }

    #[test]
    fn conditional_generators_match_enumeration() {
        for (i, case) in CaseLabel::ALL.into_iter().enumerate() {
            let p = conditional_p_value(case, 100 + i as u64);
            assert!(p > 0.01, "{case}: p = {p}");
        }
    }

    #[test]
    fn argmax_samples_avoid_triggers() {
        let xs = gen_case_conditional(CaseLabel::Argmax, 100, 64, 200, &mut rng_from_seed(2)).unwrap();
        assert!(xs.iter().all(|e| !e.tokens.contains(&50) && !e.tokens.contains(&64)));
        assert!(xs.iter().all(|e| e.tokens.iter().all(|&t| t < 100)));
        assert!(xs.iter().any(|e| e.tokens.contains(&99)));
    }

    #[test]
    fn argmin_acceptance_rate() {
        let (_, attempts) = gen_case_conditional_counted(CaseLabel::Argmin, 100, 4, 4000, &mut rng_from_seed(3)).unwrap();
        let rate = 4000.0 / attempts as f64;
        assert!((rate - (1.0 - 0.99f64.powi(4))).abs() < 0.002, "{rate}");
    }

    #[test]
    fn pathological_rejection_is_refused() {
        let err = gen_case_conditional(CaseLabel::Argmin, 10_000_000, 1, 1, &mut rng_from_seed(0)).unwrap_err();
        assert!(err.to_string().contains("constructively"));
        assert!(gen_case_conditional(CaseLabel::First, 50, 4, 1, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn mode_examples() {
        assert_eq!(mode_of(&[0, 1, 1, 2], 3), 1);
        assert_eq!(mode_of(&[1, 1, 0, 0], 2), 0);
        assert_eq!(mode_of(&[3], 4), 3);
    }

    #[test]
    fn mode_targets_match_brute_force() {
        let mut rng = rng_from_seed(8);
        let xs = gen_mode_batch(10, 20, 20_000, &mut rng).unwrap();
        for e in &xs {
            let count = |v: usize| e.tokens.iter().filter(|&&t| t == v).count();
            let best = (0..10).map(count).max().unwrap();
            let oracle = (0..10).find(|&v| count(v) == best).unwrap();
            assert_eq!(e.target, oracle);
        }
    }

    #[test]
    fn task_lengths() {
        let case = TaskSpec { kind: TaskKind::Case, n: 128, vocab: 100 };
        assert_eq!((case.n_val(), case.n_max()), (64, 128));
        let mode = TaskSpec { kind: TaskKind::Mode, n: 128, vocab: 10 };
        assert_eq!((mode.n_val(), mode.n_max()), (256, 256));
        assert!(!mode.positional());
        let b = case.batch(16, 4, &mut rng_from_seed(1)).unwrap();
        assert_eq!((b.tokens.len(), b.targets.len(), b.size, b.n), (64, 4, 4, 16));
    }

    #[test]
    fn examples_serialize_as_documented() {
        let e = labelled(vec![1, 2, 50, 4]);
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"{"tokens":[1,2,50,4],"target":0,"case":"first"}"#);
        let m = Example { tokens: vec![1, 1], target: 1, case: None };
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"tokens":[1,1],"target":1}"#);
    }
}
