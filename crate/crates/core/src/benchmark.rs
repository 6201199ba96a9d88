//! Contrastive pair comparisons, per-task accuracy and bootstrap intervals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, PairFailure, Result};
use crate::estimators::{self, EstimatorConfig, Method, ScoreRecord};
use crate::trace::{BenchmarkManifest, ContrastivePair, TraceStore};

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Correct,
    Incorrect,
    Tie,
}

impl Outcome {
    /// Outcome when the positive should score lower (NLL).
    pub fn lower_wins(positive: f64, negative: f64) -> Self {
        if positive < negative {
            Outcome::Correct
        } else if positive > negative {
            Outcome::Incorrect
        } else {
            Outcome::Tie
        }
    }

    /// Outcome when the positive should score higher (similarity).
    pub fn higher_wins(positive: f64, negative: f64) -> Self {
        Self::lower_wins(negative, positive)
    }

    pub fn credit(self) -> f64 {
        match self {
            Outcome::Correct => 1.0,
            Outcome::Incorrect => 0.0,
            Outcome::Tie => 0.5,
        }
    }
}

/// Accuracy in percent with half credit for ties.
pub fn accuracy(outcomes: &[Outcome]) -> f64 {
    if outcomes.is_empty() {
        return f64::NAN;
    }
    let credit: f64 = outcomes.iter().map(|o| o.credit()).sum();
    credit / outcomes.len() as f64 * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub pair_id: String,
    pub task: String,
    pub method: Method,
    pub nll_positive: f64,
    pub nll_negative: f64,
    pub outcome: Outcome,
    pub positive_id: String,
    pub negative_id: String,
    pub positive_frames: usize,
    pub negative_frames: usize,
}

impl ComparisonResult {
    pub fn score_records(&self) -> [ScoreRecord; 2] {
        [
            ScoreRecord {
                utterance_id: self.positive_id.clone(),
                method: self.method,
                value: self.nll_positive,
                frames_used: self.positive_frames,
            },
            ScoreRecord {
                utterance_id: self.negative_id.clone(),
                method: self.method,
                value: self.nll_negative,
                frames_used: self.negative_frames,
            },
        ]
    }
}

/// Score both sides of a pair on the channels whose type is in `types`
/// (all channels when `types` is `None`).
pub fn compare_pair(
    pair: &ContrastivePair,
    config: &EstimatorConfig,
    types: Option<&BTreeSet<String>>,
) -> Result<ComparisonResult> {
    let inner = || -> Result<ComparisonResult> {
        if !pair.has_shared_prompt() && config.method.needs_prompt() {
            return Err(EvalError::Config(format!("{} needs a shared prompt", config.method)));
        }
        let (pos, neg) = match types {
            Some(t) => (pair.positive().select_channels(t)?, pair.negative().select_channels(t)?),
            None => (pair.positive().clone(), pair.negative().clone()),
        };
        let sp = estimators::score(&pos, config)?;
        let sn = estimators::score(&neg, config)?;
        Ok(ComparisonResult {
            pair_id: pair.pair_id().to_owned(),
            task: pair.task().to_owned(),
            method: config.method,
            nll_positive: sp.value,
            nll_negative: sn.value,
            outcome: Outcome::lower_wins(sp.value, sn.value),
            positive_id: pos.utterance_id().to_owned(),
            negative_id: neg.utterance_id().to_owned(),
            positive_frames: sp.frames_used,
            negative_frames: sn.frames_used,
        })
    };
    inner().map_err(|e| e.for_pair(pair.pair_id()))
}

/// Percentile interval of bootstrap-resampled accuracies.
///
/// Pairs are resampled with replacement; percentiles use linear
/// interpolation between order statistics.
pub fn bootstrap_ci(outcomes: &[Outcome], iterations: usize, seed: u64) -> Result<(f64, f64)> {
    bootstrap_ci_with(outcomes, iterations, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub(crate) fn bootstrap_ci_with<R: Rng>(outcomes: &[Outcome], iterations: usize, rng: &mut R) -> Result<(f64, f64)> {
    if outcomes.is_empty() {
        return Err(EvalError::InvalidArgument("bootstrap needs at least one outcome".into()));
    }
    if iterations < 100 {
        return Err(EvalError::InvalidArgument(format!("bootstrap needs >= 100 iterations, got {iterations}")));
    }
    let n = outcomes.len();
    // credits are multiples of 0.5, so sum half-credits as integers
    let halves: Vec<u32> = outcomes.iter().map(|o| (o.credit() * 2.0) as u32).collect();
    let mut stats: Vec<f64> = (0..iterations)
        .map(|_| {
            let s: u64 = (0..n).map(|_| halves[rng.gen_range(0..n)] as u64).sum();
            s as f64 / 2.0 / n as f64 * 100.0
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let acc = accuracy(outcomes);
    let lo = percentile_sorted(&stats, 2.5).min(acc);
    let hi = percentile_sorted(&stats, 97.5).max(acc);
    Ok((lo, hi))
}

/// Linear-interpolation percentile of sorted data, `p` in [0, 100].
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: String,
    pub method: String,
    pub accuracy_percent: f64,
    pub n_pairs: usize,
    pub ci95: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    #[default]
    SkipAndReport,
    FailFast,
}

impl FromStr for FailurePolicy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skip" | "skip_and_report" => Ok(FailurePolicy::SkipAndReport),
            "fail_fast" | "fail-fast" => Ok(FailurePolicy::FailFast),
            _ => Err(EvalError::Config(format!("unknown failure policy {s:?}"))),
        }
    }
}

impl fmt::Display for FailurePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailurePolicy::SkipAndReport => "skip_and_report",
            FailurePolicy::FailFast => "fail_fast",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkOptions {
    pub bootstrap_iterations: usize,
    pub seed: u64,
    pub failure_policy: FailurePolicy,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            bootstrap_iterations: DEFAULT_BOOTSTRAP_ITERATIONS,
            seed: 0,
            failure_policy: FailurePolicy::SkipAndReport,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub accuracies: Vec<TaskAccuracy>,
    pub comparisons: Vec<ComparisonResult>,
    pub failures: Vec<PairFailure>,
}

/// Fold outcomes into per-task accuracies, in `tasks` order. Tasks without
/// outcomes are left out. Each task's bootstrap draws from its own stream of
/// the seeded generator, so results do not depend on which tasks are present
/// before it.
pub fn aggregate(
    outcomes: impl IntoIterator<Item = (String, Outcome)>,
    tasks: &[String],
    method: &str,
    options: &BenchmarkOptions,
) -> Result<Vec<TaskAccuracy>> {
    let mut by_task: BTreeMap<String, Vec<Outcome>> = BTreeMap::new();
    for (task, o) in outcomes {
        by_task.entry(task).or_default().push(o);
    }
    let mut out = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        let Some(os) = by_task.get(task) else {
            log::warn!("task {task} has no scored pairs");
            continue;
        };
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(i as u64);
        out.push(TaskAccuracy {
            task: task.clone(),
            method: method.to_owned(),
            accuracy_percent: accuracy(os),
            n_pairs: os.len(),
            ci95: bootstrap_ci_with(os, options.bootstrap_iterations, &mut rng)?,
        });
    }
    Ok(out)
}

/// Compare every pair (in parallel) and aggregate per task.
pub fn run_pairs(
    pairs: &[ContrastivePair],
    tasks: &[String],
    config: &EstimatorConfig,
    types: Option<&BTreeSet<String>>,
    options: &BenchmarkOptions,
) -> Result<BenchmarkReport> {
    config.validate()?;
    let results: Vec<(String, Result<ComparisonResult>)> =
        pairs.par_iter().map(|p| (p.pair_id().to_owned(), compare_pair(p, config, types))).collect();
    finish(results, tasks, config.method, options)
}

/// Load the manifest's pairs and run the benchmark over them.
pub fn run_benchmark(
    manifest: &BenchmarkManifest,
    config: &EstimatorConfig,
    types: Option<&BTreeSet<String>>,
    options: &BenchmarkOptions,
) -> Result<BenchmarkReport> {
    config.validate()?;
    let store = TraceStore::new(manifest);
    store.preload();
    let results: Vec<(String, Result<ComparisonResult>)> = manifest
        .pairs
        .par_iter()
        .map(|entry| {
            let r = store.load_pair(entry).and_then(|p| compare_pair(&p, config, types));
            (entry.pair_id.clone(), r)
        })
        .collect();
    finish(results, &manifest.tasks, config.method, options)
}

fn finish(
    results: Vec<(String, Result<ComparisonResult>)>,
    tasks: &[String],
    method: Method,
    options: &BenchmarkOptions,
) -> Result<BenchmarkReport> {
    let mut comparisons = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (pair_id, r) in results {
        match r {
            Ok(c) => comparisons.push(c),
            Err(e) if options.failure_policy == FailurePolicy::FailFast => return Err(e),
            Err(e) => {
                log::warn!("skipping pair {pair_id}: {e}");
                failures.push(PairFailure { pair_id, reason: e.to_string() });
            }
        }
    }
    let accuracies =
        aggregate(comparisons.iter().map(|c| (c.task.clone(), c.outcome)), tasks, method.as_str(), options)?;
    Ok(BenchmarkReport { accuracies, comparisons, failures })
}

/// One cell of the model x task x method score matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: String,
    pub task: String,
    pub method: String,
    pub token_type_set: String,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

impl ScoreRow {
    pub fn from_task(model: &str, types: &str, t: &TaskAccuracy) -> Self {
        ScoreRow {
            model: model.to_owned(),
            task: t.task.clone(),
            method: t.method.clone(),
            token_type_set: types.to_owned(),
            accuracy: t.accuracy_percent,
            ci_low: t.ci95.0,
            ci_high: t.ci95.1,
            n: t.n_pairs,
        }
    }
}

/// Join a token type set as `a+b+c`.
pub fn type_set_label(types: &BTreeSet<String>) -> String {
    types.iter().map(String::as_str).collect::<Vec<_>>().join("+")
}

pub fn read_score_matrix(reader: impl Read) -> Result<Vec<ScoreRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| EvalError::schema(format!("score matrix row {}", i + 1), e.to_string())))
        .collect()
}

pub fn write_score_matrix(writer: impl Write, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| EvalError::schema("score matrix", e.to_string()))?;
    }
    w.flush().map_err(|e| EvalError::io("score matrix", e))
}
