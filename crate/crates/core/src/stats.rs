//! MOS aggregation, ranking and correlation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::benchmark::ScoreRow;
use crate::error::{EvalError, Result};

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(EvalError::DimensionMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::InvalidArgument(format!("correlation needs n >= 2, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EvalError::InvalidArgument("correlation input has non-finite values".into()));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::DegenerateVariance(if sxx == 0.0 { "x is constant" } else { "y is constant" }.into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson over average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MosRecord {
    pub sample_id: String,
    pub model: String,
    pub task: String,
    pub annotator_id: String,
    pub rating: u8,
}

pub fn read_mos(reader: impl Read) -> Result<Vec<MosRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| EvalError::schema("MOS header", e.to_string()))?.clone();
    let expected = ["sample_id", "model", "task", "annotator_id", "rating"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(EvalError::schema("MOS header", format!("expected {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for (i, r) in rdr.deserialize::<MosRecord>().enumerate() {
        let loc = format!("MOS row {}", i + 1);
        let rec = r.map_err(|e| EvalError::schema(&loc, e.to_string()))?;
        if !(1..=5).contains(&rec.rating) {
            return Err(EvalError::invariant(&loc, format!("rating {} outside 1..=5", rec.rating)));
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdKind {
    #[default]
    Sample,
    Population,
}

/// Mean and standard deviation; the sample form is 0 for a single value.
pub fn mean_sd(x: &[f64], kind: SdKind) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    let denom = match kind {
        SdKind::Sample if x.len() > 1 => n - 1.0,
        SdKind::Sample => return (m, 0.0),
        SdKind::Population => n,
    };
    (m, (ss / denom).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MosCell {
    pub model: String,
    pub task: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelMos {
    pub model: String,
    pub average: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MosSummary {
    pub sd_kind: SdKind,
    pub tasks: Vec<String>,
    pub cells: Vec<MosCell>,
    /// Sorted by rank.
    pub models: Vec<ModelMos>,
}

/// Per-cell mean and sd, per-model unweighted mean over task means, and
/// ranks by descending average (ties by model name).
pub fn aggregate_mos(records: &[MosRecord], sd_kind: SdKind) -> Result<MosSummary> {
    if records.is_empty() {
        return Err(EvalError::EmptyCell(vec!["no ratings".into()]));
    }
    let mut cells: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for r in records {
        cells.entry((&r.model, &r.task)).or_default().push(r.rating as f64);
    }
    let models: BTreeSet<&str> = records.iter().map(|r| r.model.as_str()).collect();
    let tasks: BTreeSet<&str> = records.iter().map(|r| r.task.as_str()).collect();
    let empty: Vec<String> = models
        .iter()
        .flat_map(|m| tasks.iter().map(move |t| (*m, *t)))
        .filter(|k| !cells.contains_key(k))
        .map(|(m, t)| format!("{m}/{t}"))
        .collect();
    if !empty.is_empty() {
        return Err(EvalError::EmptyCell(empty));
    }
    let cells: Vec<MosCell> = cells
        .into_iter()
        .map(|((m, t), xs)| {
            let (mean, sd) = mean_sd(&xs, sd_kind);
            MosCell { model: m.to_owned(), task: t.to_owned(), mean, sd, n: xs.len() }
        })
        .collect();
    let mut per_model: Vec<ModelMos> = models
        .iter()
        .map(|m| {
            let means: Vec<f64> = cells.iter().filter(|c| c.model == *m).map(|c| c.mean).collect();
            ModelMos { model: (*m).to_owned(), average: means.iter().sum::<f64>() / means.len() as f64, rank: 0 }
        })
        .collect();
    // averages equal up to rounding count as tied
    let key = |m: &ModelMos| (m.average * 1e9).round() as i64;
    per_model.sort_by(|a, b| key(b).cmp(&key(a)).then_with(|| a.model.cmp(&b.model)));
    for (i, m) in per_model.iter_mut().enumerate() {
        m.rank = i + 1;
    }
    Ok(MosSummary { sd_kind, tasks: tasks.into_iter().map(str::to_owned).collect(), cells, models: per_model })
}

impl MosSummary {
    /// Per-cell means as a score column.
    pub fn column(&self) -> ScoreColumn {
        ScoreColumn::new("mos", self.cells.iter().map(|c| ((c.model.clone(), c.task.clone()), c.mean)))
    }

    /// Score-matrix rows with method `mos`.
    pub fn score_rows(&self) -> Vec<ScoreRow> {
        self.cells
            .iter()
            .map(|c| ScoreRow {
                model: c.model.clone(),
                task: c.task.clone(),
                method: "mos".into(),
                token_type_set: String::new(),
                accuracy: c.mean,
                ci_low: c.mean - c.sd,
                ci_high: c.mean + c.sd,
                n: c.n,
            })
            .collect()
    }
}

/// Values keyed by (model, task).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreColumn {
    pub name: String,
    pub values: BTreeMap<(String, String), f64>,
}

impl ScoreColumn {
    pub fn new(name: impl Into<String>, values: impl IntoIterator<Item = ((String, String), f64)>) -> Self {
        Self { name: name.into(), values: values.into_iter().collect() }
    }

    /// Rows of one method (and, if given, one token type set). Duplicate
    /// cells are a schema error.
    pub fn from_rows(rows: &[ScoreRow], method: &str, token_type_set: Option<&str>) -> Result<Self> {
        let mut values = BTreeMap::new();
        for r in rows.iter().filter(|r| r.method == method && token_type_set.is_none_or(|t| r.token_type_set == t)) {
            if values.insert((r.model.clone(), r.task.clone()), r.accuracy).is_some() {
                return Err(EvalError::schema(
                    "score matrix",
                    format!("duplicate cell {}/{} for method {method}", r.model, r.task),
                ));
            }
        }
        Ok(Self::new(method, values))
    }

    /// Restrict to the given models.
    pub fn filter_models(&self, models: &BTreeSet<String>) -> Self {
        Self::new(
            self.name.clone(),
            self.values.iter().filter(|((m, _), _)| models.contains(m)).map(|(k, v)| (k.clone(), *v)),
        )
    }

    fn model_means(&self) -> BTreeMap<&str, f64> {
        let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for ((m, _), v) in &self.values {
            let e = acc.entry(m).or_default();
            e.0 += v;
            e.1 += 1;
        }
        acc.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    PerModelAvg,
    PerModelTask,
}

impl Pairing {
    pub const ALL: [Pairing; 2] = [Pairing::PerModelAvg, Pairing::PerModelTask];
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pairing::PerModelAvg => "per_model_avg",
            Pairing::PerModelTask => "per_model_task",
        })
    }
}

impl FromStr for Pairing {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_model_avg" => Ok(Pairing::PerModelAvg),
            "per_model_task" => Ok(Pairing::PerModelTask),
            _ => Err(EvalError::Config(format!("unknown pairing {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationPoint {
    pub key: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub x: String,
    pub y: String,
    pub pairing: Pairing,
    pub pearson: f64,
    pub spearman: f64,
    pub n: usize,
    pub points: Vec<CorrelationPoint>,
}

/// Correlate two score columns over identical (model, task) keys.
pub fn correlate_scores(a: &ScoreColumn, b: &ScoreColumn, pairing: Pairing) -> Result<CorrelationReport> {
    let ka: BTreeSet<&(String, String)> = a.values.keys().collect();
    let kb: BTreeSet<&(String, String)> = b.values.keys().collect();
    let unmatched: Vec<String> = ka.symmetric_difference(&kb).map(|(m, t)| format!("{m}/{t}")).collect();
    if !unmatched.is_empty() {
        return Err(EvalError::KeyMismatch(unmatched));
    }
    let points: Vec<CorrelationPoint> = match pairing {
        Pairing::PerModelTask => a
            .values
            .iter()
            .map(|(k, x)| CorrelationPoint { key: format!("{}/{}", k.0, k.1), x: *x, y: b.values[k] })
            .collect(),
        Pairing::PerModelAvg => {
            let mb = b.model_means();
            a.model_means().into_iter().map(|(m, x)| CorrelationPoint { key: m.to_owned(), x, y: mb[m] }).collect()
        }
    };
    if points.len() < 3 {
        return Err(EvalError::InvalidArgument(format!(
            "{pairing} pairing yields {} point(s); need at least 3",
            points.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    log::debug!("{} vs {} ({pairing}): {} points", a.name, b.name, points.len());
    Ok(CorrelationReport {
        x: a.name.clone(),
        y: b.name.clone(),
        pairing,
        pearson: pearson(&xs, &ys)?,
        spearman: spearman(&xs, &ys)?,
        n: points.len(),
        points,
    })
}
