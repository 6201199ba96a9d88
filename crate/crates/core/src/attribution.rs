//! Token-type coalitions, exact Shapley values and advantage decomposition.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark::{run_pairs, BenchmarkOptions};
use crate::error::{EvalError, PairFailure, Result};
use crate::estimators::{score_span, EstimatorConfig};
use crate::trace::{BenchmarkManifest, ContrastivePair, TokenTrace, TraceStore};

pub const MAX_PLAYERS: usize = 8;
pub const DEFAULT_NULL_VALUE: f64 = 50.0;

/// Bit set over player indices; bit `i` set means player `i` is in the coalition.
pub type Mask = u32;

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// Exact Shapley values of an `n`-player game given densely by `v[mask]`
/// (with `v[0]` the empty coalition).
///
/// Weights `|S|! (n-|S|-1)!` are integers; the weighted sum is divided by
/// `n!` once at the end.
pub fn shapley_values(n: usize, v: &[f64]) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(EvalError::InvalidArgument("game has no players".into()));
    }
    if n > MAX_PLAYERS {
        return Err(EvalError::TooManyPlayers(n));
    }
    if v.len() != 1 << n {
        return Err(EvalError::IncompleteTable(format!("expected {} values, got {}", 1 << n, v.len())));
    }
    let weights: Vec<f64> = (0..n).map(|s| (factorial(s) * factorial(n - s - 1)) as f64).collect();
    let total = factorial(n) as f64;
    Ok((0..n)
        .map(|i| {
            let bit = 1 << i;
            let acc: f64 = (0..v.len() as Mask)
                .filter(|m| m & bit == 0)
                .map(|m| weights[m.count_ones() as usize] * (v[(m | bit) as usize] - v[m as usize]))
                .sum();
            acc / total
        })
        .collect())
}

/// Accuracy per task for every non-empty coalition of token types.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionTable {
    players: Vec<String>,
    tasks: Vec<String>,
    null_value: f64,
    /// `values[mask][task]`; index 0 is unused.
    values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRow {
    coalition: Vec<String>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    players: Vec<String>,
    tasks: Vec<String>,
    #[serde(default = "default_null")]
    null_value: f64,
    rows: Vec<TableRow>,
}

fn default_null() -> f64 {
    DEFAULT_NULL_VALUE
}

impl CoalitionTable {
    /// Build from `(coalition, per-task values)` rows. Every non-empty subset
    /// of `players` must appear exactly once.
    pub fn new(
        players: Vec<String>,
        tasks: Vec<String>,
        null_value: f64,
        rows: impl IntoIterator<Item = (Vec<String>, Vec<f64>)>,
    ) -> Result<Self> {
        let n = players.len();
        if n == 0 {
            return Err(EvalError::InvalidArgument("coalition table has no players".into()));
        }
        if n > MAX_PLAYERS {
            return Err(EvalError::TooManyPlayers(n));
        }
        if players.iter().collect::<BTreeSet<_>>().len() != n {
            return Err(EvalError::schema("coalition table", "duplicate player names"));
        }
        if tasks.is_empty() {
            return Err(EvalError::schema("coalition table", "no task columns"));
        }
        if !null_value.is_finite() {
            return Err(EvalError::schema("coalition table", "null_value must be finite"));
        }
        let index: BTreeMap<&str, usize> = players.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
        let mut values: Vec<Option<Vec<f64>>> = vec![None; 1 << n];
        for (coalition, vals) in rows {
            let loc = format!("coalition {}", coalition.join("+"));
            let mut mask: Mask = 0;
            for p in &coalition {
                let i = *index.get(p.as_str()).ok_or_else(|| EvalError::schema(&loc, format!("unknown player {p}")))?;
                if mask & (1 << i) != 0 {
                    return Err(EvalError::schema(&loc, format!("player {p} listed twice")));
                }
                mask |= 1 << i;
            }
            if mask == 0 {
                return Err(EvalError::schema(&loc, "empty coalition; set null_value instead"));
            }
            if vals.len() != tasks.len() {
                return Err(EvalError::schema(&loc, format!("{} values for {} tasks", vals.len(), tasks.len())));
            }
            if let Some(v) = vals.iter().find(|v| !(0.0..=100.0).contains(*v)) {
                return Err(EvalError::invariant(&loc, format!("accuracy {v} outside [0, 100]")));
            }
            if values[mask as usize].replace(vals).is_some() {
                return Err(EvalError::schema(&loc, "coalition listed twice"));
            }
        }
        let missing: Vec<String> =
            (1..values.len()).filter(|m| values[*m].is_none()).map(|m| mask_label(&players, m as Mask)).collect();
        if !missing.is_empty() {
            return Err(EvalError::IncompleteTable(format!("missing coalitions {}", missing.join(", "))));
        }
        let values = values.into_iter().map(Option::unwrap_or_default).collect();
        Ok(Self { players, tasks, null_value, values })
    }

    pub fn players(&self) -> &[String] {
        &self.players
    }

    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    pub fn null_value(&self) -> f64 {
        self.null_value
    }

    /// `v(S)` for one task; the empty coalition returns the null value.
    pub fn value(&self, mask: Mask, task: usize) -> f64 {
        if mask == 0 {
            self.null_value
        } else {
            self.values[mask as usize][task]
        }
    }

    pub fn from_json(text: &str, location: &str) -> Result<Self> {
        let f: TableFile = serde_json::from_str(text).map_err(|e| EvalError::schema(location, e.to_string()))?;
        Self::new(f.players, f.tasks, f.null_value, f.rows.into_iter().map(|r| (r.coalition, r.values)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        let rows = (1..self.values.len() as Mask)
            .map(|m| TableRow { coalition: mask_players(&self.players, m), values: self.values[m as usize].clone() })
            .collect();
        let f =
            TableFile { players: self.players.clone(), tasks: self.tasks.clone(), null_value: self.null_value, rows };
        serde_json::to_string_pretty(&f).expect("table serialization cannot fail")
    }
}

fn mask_players(players: &[String], mask: Mask) -> Vec<String> {
    players.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, p)| p.clone()).collect()
}

fn mask_label(players: &[String], mask: Mask) -> String {
    mask_players(players, mask).join("+")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapleyResult {
    pub players: Vec<String>,
    pub tasks: Vec<String>,
    /// `per_task[task][player]`.
    pub per_task: Vec<Vec<f64>>,
    /// Mean of the per-task values; equals the Shapley value of the
    /// task-averaged game.
    pub average: Vec<f64>,
    /// Largest `|sum(phi) - (v(N) - v(empty))|` over the task columns.
    pub efficiency_residual: f64,
}

pub fn shapley(table: &CoalitionTable) -> Result<ShapleyResult> {
    let n = table.players.len();
    let full = (1 << n) - 1;
    let mut per_task = Vec::with_capacity(table.tasks.len());
    let mut residual = 0.0f64;
    for t in 0..table.tasks.len() {
        let v: Vec<f64> = (0..=full).map(|m| table.value(m, t)).collect();
        let phi = shapley_values(n, &v)?;
        let gap = table.value(full, t) - table.null_value;
        residual = residual.max((phi.iter().sum::<f64>() - gap).abs());
        per_task.push(phi);
    }
    let k = per_task.len() as f64;
    let average = (0..n).map(|i| per_task.iter().map(|p| p[i]).sum::<f64>() / k).collect();
    Ok(ShapleyResult {
        players: table.players.clone(),
        tasks: table.tasks.clone(),
        per_task,
        average,
        efficiency_residual: residual,
    })
}

impl ShapleyResult {
    /// `player,<task>...,avg` with one row per player.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("player");
        for t in &self.tasks {
            write!(out, ",{t}").unwrap();
        }
        out.push_str(",avg\n");
        for (i, p) in self.players.iter().enumerate() {
            out.push_str(p);
            for phi in &self.per_task {
                write!(out, ",{}", phi[i]).unwrap();
            }
            writeln!(out, ",{}", self.average[i]).unwrap();
        }
        out
    }

    /// Fixed-width table with signed values rounded to one decimal.
    pub fn render(&self) -> String {
        let mut out = format!("{:<10}", "phi");
        for t in self.tasks.iter().chain(std::iter::once(&"avg".to_string())) {
            write!(out, " {:>10}", t).unwrap();
        }
        out.push('\n');
        for (i, p) in self.players.iter().enumerate() {
            write!(out, "{:<10}", p).unwrap();
            for v in self.per_task.iter().map(|phi| phi[i]).chain(std::iter::once(self.average[i])) {
                write!(out, " {:>+10.1}", v).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn check_players(manifest: &BenchmarkManifest, players: &[String]) -> Result<()> {
    if players.is_empty() {
        return Err(EvalError::InvalidArgument("no players".into()));
    }
    if players.len() > MAX_PLAYERS {
        return Err(EvalError::TooManyPlayers(players.len()));
    }
    let declared = manifest.token_type_set();
    let unknown: Vec<String> = players.iter().filter(|p| !declared.contains(*p)).cloned().collect();
    if !unknown.is_empty() {
        return Err(EvalError::UnknownTokenType(unknown));
    }
    Ok(())
}

fn load_pairs(
    manifest: &BenchmarkManifest,
    options: &BenchmarkOptions,
) -> Result<(Vec<ContrastivePair>, Vec<PairFailure>)> {
    let store = TraceStore::new(manifest);
    store.preload();
    let loaded: Vec<Result<ContrastivePair>> = manifest.pairs.par_iter().map(|e| store.load_pair(e)).collect();
    let mut pairs = Vec::new();
    let mut failures = Vec::new();
    for (entry, r) in manifest.pairs.iter().zip(loaded) {
        match r {
            Ok(p) => pairs.push(p),
            Err(e) if options.failure_policy == crate::benchmark::FailurePolicy::FailFast => return Err(e),
            Err(e) => failures.push(PairFailure { pair_id: entry.pair_id.clone(), reason: e.to_string() }),
        }
    }
    Ok((pairs, failures))
}

/// Run the benchmark once per non-empty coalition of `players`.
pub fn evaluate_coalitions(
    manifest: &BenchmarkManifest,
    config: &EstimatorConfig,
    players: &[String],
    null_value: f64,
    options: &BenchmarkOptions,
) -> Result<(CoalitionTable, Vec<PairFailure>)> {
    check_players(manifest, players)?;
    let (pairs, mut failures) = load_pairs(manifest, options)?;
    evaluate_pair_coalitions(&pairs, &manifest.tasks, config, players, null_value, options).map(|(t, f)| {
        failures.extend(f);
        (t, failures)
    })
}

/// Coalition evaluation over already-loaded pairs. Tasks are the ones scored
/// by the full coalition; every other coalition must score them too.
pub fn evaluate_pair_coalitions(
    pairs: &[ContrastivePair],
    tasks: &[String],
    config: &EstimatorConfig,
    players: &[String],
    null_value: f64,
    options: &BenchmarkOptions,
) -> Result<(CoalitionTable, Vec<PairFailure>)> {
    let n = players.len();
    if n == 0 {
        return Err(EvalError::InvalidArgument("no players".into()));
    }
    if n > MAX_PLAYERS {
        return Err(EvalError::TooManyPlayers(n));
    }
    let masks: Vec<Mask> = (1..(1 << n)).collect();
    let runs: Vec<Result<(Mask, crate::benchmark::BenchmarkReport)>> = masks
        .par_iter()
        .map(|&m| {
            let types: BTreeSet<String> = mask_players(players, m).into_iter().collect();
            run_pairs(pairs, tasks, config, Some(&types), options).map(|r| (m, r))
        })
        .collect();
    let mut by_mask = BTreeMap::new();
    let mut failures: BTreeMap<String, PairFailure> = BTreeMap::new();
    for r in runs {
        let (m, report) = r?;
        for f in &report.failures {
            failures.entry(f.pair_id.clone()).or_insert_with(|| f.clone());
        }
        let accs: BTreeMap<String, f64> = report.accuracies.into_iter().map(|a| (a.task, a.accuracy_percent)).collect();
        by_mask.insert(m, accs);
    }
    let full: Mask = (1 << n) - 1;
    let table_tasks: Vec<String> = tasks.iter().filter(|t| by_mask[&full].contains_key(*t)).cloned().collect();
    let mut rows = Vec::with_capacity(by_mask.len());
    for (m, accs) in &by_mask {
        let vals = table_tasks
            .iter()
            .map(|t| {
                accs.get(t).copied().ok_or_else(|| {
                    EvalError::IncompleteTable(format!(
                        "coalition {} scored no pair of task {t}",
                        mask_label(players, *m)
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((mask_players(players, *m), vals));
    }
    let table = CoalitionTable::new(players.to_vec(), table_tasks, null_value, rows)?;
    Ok((table, failures.into_values().collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageWeighting {
    /// Components are each type's share of the flattened token mean, so
    /// they add up to the total.
    #[default]
    FrameCount,
    /// Components are per-type mean NLL gaps.
    PerTypeMean,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdvantageProfile {
    pub players: Vec<String>,
    pub weighting: AdvantageWeighting,
    /// Mean over pairs of the per-type component of `NLL(neg) - NLL(pos)`.
    pub components: Vec<f64>,
    /// Mean over pairs of `NLL(neg) - NLL(pos)` on the full coalition.
    pub total: f64,
    pub n_pairs: usize,
}

/// Per-type `(sum, tokens)` inside the span the estimator selects.
fn type_sums(trace: &TokenTrace, config: &EstimatorConfig, players: &[String]) -> Result<(Vec<(f64, usize)>, f64)> {
    let span = score_span(trace, config)?;
    let mut out = vec![(0.0, 0usize); players.len()];
    for (ch, (s, k)) in trace.channels().iter().zip(&span.per_channel) {
        if let Some(i) = players.iter().position(|p| p == ch.token_type()) {
            out[i].0 += s;
            out[i].1 += k;
        }
    }
    Ok((out, span.sum() / span.tokens() as f64))
}

fn pair_advantage(
    pair: &ContrastivePair,
    config: &EstimatorConfig,
    players: &[String],
    types: &BTreeSet<String>,
    weighting: AdvantageWeighting,
) -> Result<(Vec<f64>, f64)> {
    let pos = pair.positive().select_channels(types)?;
    let neg = pair.negative().select_channels(types)?;
    let (sp, mp) = type_sums(&pos, config, players)?;
    let (sn, mn) = type_sums(&neg, config, players)?;
    let tp: usize = sp.iter().map(|x| x.1).sum();
    let tn: usize = sn.iter().map(|x| x.1).sum();
    let comps = sp
        .iter()
        .zip(&sn)
        .map(|(&(ps, pk), &(ns, nk))| match weighting {
            AdvantageWeighting::FrameCount => ns / tn as f64 - ps / tp as f64,
            AdvantageWeighting::PerTypeMean => {
                let m = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
                m(ns, nk) - m(ps, pk)
            }
        })
        .collect();
    Ok((comps, mn - mp))
}

/// Decompose the mean per-pair advantage over pairs already loaded.
pub fn advantage_of_pairs(
    pairs: &[ContrastivePair],
    config: &EstimatorConfig,
    players: &[String],
    weighting: AdvantageWeighting,
) -> Result<AdvantageProfile> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(EvalError::InvalidArgument("advantage needs at least one pair".into()));
    }
    let types: BTreeSet<String> = players.iter().cloned().collect();
    let per_pair: Vec<(Vec<f64>, f64)> = pairs
        .par_iter()
        .map(|p| pair_advantage(p, config, players, &types, weighting).map_err(|e| e.for_pair(p.pair_id())))
        .collect::<Result<_>>()?;
    let k = per_pair.len() as f64;
    let components = (0..players.len()).map(|i| per_pair.iter().map(|(c, _)| c[i]).sum::<f64>() / k).collect();
    let total = per_pair.iter().map(|(_, t)| t).sum::<f64>() / k;
    Ok(AdvantageProfile { players: players.to_vec(), weighting, components, total, n_pairs: per_pair.len() })
}

pub fn advantage_decomposition(
    manifest: &BenchmarkManifest,
    config: &EstimatorConfig,
    players: &[String],
    weighting: AdvantageWeighting,
    options: &BenchmarkOptions,
) -> Result<(AdvantageProfile, Vec<PairFailure>)> {
    check_players(manifest, players)?;
    let (pairs, failures) = load_pairs(manifest, options)?;
    Ok((advantage_of_pairs(&pairs, config, players, weighting)?, failures))
}
