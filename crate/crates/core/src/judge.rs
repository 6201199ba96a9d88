//! Embedding judges: per-task selection on a dev set and continuation scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark::{aggregate, BenchmarkOptions, Outcome, TaskAccuracy};
use crate::error::{EvalError, Result};
use crate::trace::{EmbeddingStore, SegmentRole};

/// (embed model, pair id) lacking an embedding.
type MissingKey = (String, String);

pub const JUDGE_METHOD: &str = "judge";

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EvalError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// A labeled item: the pair id doubles as the embedding segment id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeItem {
    pub pair_id: String,
    pub task: String,
}

impl JudgeItem {
    pub fn new(pair_id: impl Into<String>, task: impl Into<String>) -> Self {
        Self { pair_id: pair_id.into(), task: task.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeEntry {
    pub task: String,
    pub embed_model: String,
    pub dev_accuracy: f64,
    pub human_topline: Option<f64>,
    pub qualified: bool,
    /// Dev accuracy of every candidate evaluated on the task.
    pub candidates: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JudgeRegistry {
    pub entries: Vec<JudgeEntry>,
}

impl JudgeRegistry {
    pub fn get(&self, task: &str) -> Option<&JudgeEntry> {
        self.entries.iter().find(|e| e.task == task)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| EvalError::schema(path.display().to_string(), e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serialization cannot fail")
    }
}

fn embedding<'a>(store: &'a EmbeddingStore, model: &str, pair_id: &str, role: SegmentRole) -> Option<&'a [f64]> {
    store.get(model, pair_id, role)
}

/// Outcome of `cos(anchor, positive) > cos(anchor, negative)`.
pub fn contrast(anchor: &[f64], positive: &[f64], negative: &[f64]) -> Result<(f64, f64, Outcome)> {
    let sp = cosine(anchor, positive)?;
    let sn = cosine(anchor, negative)?;
    Ok((sp, sn, Outcome::higher_wins(sp, sn)))
}

fn triple<'a>(
    store: &'a EmbeddingStore,
    model: &str,
    item: &JudgeItem,
    anchor: SegmentRole,
    missing: &mut Vec<(String, String)>,
) -> Option<[&'a [f64]; 3]> {
    let get = |r| embedding(store, model, &item.pair_id, r);
    match (get(anchor), get(SegmentRole::Positive), get(SegmentRole::Negative)) {
        (Some(a), Some(p), Some(n)) => Some([a, p, n]),
        _ => {
            missing.push((model.to_owned(), item.pair_id.clone()));
            None
        }
    }
}

/// Pick, per task, the candidate with the highest dev accuracy on
/// `cos(E(S),E(P)) > cos(E(S),E(N))`. Ties go to the lexicographically first
/// model. A candidate is evaluated on a task when it has any embedding for
/// one of the task's pairs, and must then cover all of them.
pub fn select_judges(
    dev: &[JudgeItem],
    store: &EmbeddingStore,
    candidates: &[String],
    topline: &BTreeMap<String, f64>,
) -> Result<JudgeRegistry> {
    let mut tasks: Vec<&str> = Vec::new();
    for it in dev {
        if !tasks.contains(&it.task.as_str()) {
            tasks.push(&it.task);
        }
    }
    let candidates: BTreeSet<&String> = candidates.iter().collect();
    let mut missing = Vec::new();
    let mut entries = Vec::new();
    for task in tasks {
        let items: Vec<&JudgeItem> = dev.iter().filter(|i| i.task == task).collect();
        let mut scores = BTreeMap::new();
        for model in &candidates {
            if !items.iter().any(|i| store.has_segment(model, &i.pair_id)) {
                continue;
            }
            let mut outcomes = Vec::with_capacity(items.len());
            for it in &items {
                if let Some([s, p, n]) = triple(store, model, it, SegmentRole::Prompt, &mut missing) {
                    outcomes.push(contrast(s, p, n)?.2);
                }
            }
            scores.insert((*model).clone(), crate::benchmark::accuracy(&outcomes));
        }
        let best = scores.iter().fold(None::<(&String, f64)>, |best, (m, a)| match best {
            Some((_, b)) if *a <= b => best,
            _ => Some((m, *a)),
        });
        let Some((model, acc)) = best else {
            log::warn!("no candidate has embeddings for task {task}");
            continue;
        };
        let top = topline.get(task).copied();
        if top.is_none() {
            log::warn!("no human topline for task {task}; judge left unqualified");
        }
        entries.push(JudgeEntry {
            task: task.to_owned(),
            embed_model: model.clone(),
            dev_accuracy: acc,
            human_topline: top,
            qualified: top.is_some_and(|t| acc >= t),
            candidates: scores.clone(),
        });
    }
    if !missing.is_empty() {
        return Err(EvalError::MissingEmbeddings(missing));
    }
    Ok(JudgeRegistry { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub pair_id: String,
    pub task: String,
    pub embed_model: String,
    pub sim_positive: f64,
    pub sim_negative: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeScores {
    pub verdicts: Vec<JudgeVerdict>,
    pub accuracies: Vec<TaskAccuracy>,
}

/// Score generated continuations: correct when `cos(J(G),J(P)) > cos(J(G),J(N))`
/// under the task's selected judge.
pub fn score_continuations(
    registry: &JudgeRegistry,
    items: &[JudgeItem],
    store: &EmbeddingStore,
    allow_unqualified: bool,
    options: &BenchmarkOptions,
) -> Result<JudgeScores> {
    let mut tasks: Vec<String> = Vec::new();
    for it in items {
        if !tasks.contains(&it.task) {
            tasks.push(it.task.clone());
        }
    }
    for task in &tasks {
        let entry = registry.get(task).ok_or_else(|| EvalError::NoJudge(task.clone()))?;
        if !entry.qualified {
            let err = EvalError::UnqualifiedJudge {
                task: task.clone(),
                dev_accuracy: entry.dev_accuracy,
                topline: entry.human_topline.unwrap_or(f64::NAN),
            };
            if !allow_unqualified {
                return Err(err);
            }
            log::warn!("{err}; scoring anyway");
        }
    }
    let results: Vec<(Option<JudgeVerdict>, Vec<MissingKey>)> = items
        .par_iter()
        .map(|it| {
            let model = &registry.get(&it.task).expect("checked above").embed_model;
            let mut missing = Vec::new();
            let v = triple(store, model, it, SegmentRole::Generation, &mut missing).map(|[g, p, n]| {
                contrast(g, p, n).map(|(sp, sn, outcome)| JudgeVerdict {
                    pair_id: it.pair_id.clone(),
                    task: it.task.clone(),
                    embed_model: model.clone(),
                    sim_positive: sp,
                    sim_negative: sn,
                    outcome,
                })
            });
            (v.transpose(), missing)
        })
        .map(|(v, m)| v.map(|v| (v, m)))
        .collect::<Result<_>>()?;
    let mut verdicts = Vec::with_capacity(results.len());
    let mut missing = Vec::new();
    for (v, m) in results {
        verdicts.extend(v);
        missing.extend(m);
    }
    if !missing.is_empty() {
        return Err(EvalError::MissingEmbeddings(missing));
    }
    let accuracies = aggregate(verdicts.iter().map(|v| (v.task.clone(), v.outcome)), &tasks, JUDGE_METHOD, options)?;
    Ok(JudgeScores { verdicts, accuracies })
}
