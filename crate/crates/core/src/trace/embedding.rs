use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentRole {
    Prompt,
    Positive,
    Negative,
    Generation,
}

/// Embedding of one audio segment under one embedding model.
///
/// By convention `segment_id` is the pair id the segment belongs to and
/// `segment_role` says which part of the pair it is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub segment_id: String,
    pub segment_role: SegmentRole,
    pub embed_model: String,
    pub vector: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn validate(&self, location: &str) -> Result<()> {
        if self.vector.is_empty() {
            return Err(EvalError::invariant(location, "empty embedding vector"));
        }
        if self.vector.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::invariant(location, "embedding has non-finite entries"));
        }
        if self.vector.iter().all(|v| *v == 0.0) {
            return Err(EvalError::invariant(location, "embedding has zero norm"));
        }
        Ok(())
    }
}

/// Load an embedding file and check that each embed model uses one dimension.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| EvalError::io(path, e))?;
    let mut out = Vec::new();
    let mut dims: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| EvalError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("{}:{}", path.display(), i + 1);
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| EvalError::schema(&loc, e.to_string()))?;
        rec.validate(&loc)?;
        let dim = *dims.entry(rec.embed_model.clone()).or_insert(rec.vector.len());
        if dim != rec.vector.len() {
            return Err(EvalError::invariant(
                &loc,
                format!("model {} dimension {} differs from {dim}", rec.embed_model, rec.vector.len()),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_embeddings<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a EmbeddingRecord>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| EvalError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("embedding serialization cannot fail");
        writeln!(w, "{line}").map_err(|e| EvalError::io(path, e))?;
    }
    w.flush().map_err(|e| EvalError::io(path, e))
}

/// Embeddings indexed by (model, segment id, role).
#[derive(Debug, Default, Clone)]
pub struct EmbeddingStore {
    map: BTreeMap<(String, String, SegmentRole), Vec<f64>>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = EmbeddingRecord>) -> Self {
        let mut s = Self::new();
        for r in records {
            s.insert(r);
        }
        s
    }

    pub fn insert(&mut self, r: EmbeddingRecord) {
        self.map.insert((r.embed_model, r.segment_id, r.segment_role), r.vector);
    }

    pub fn get(&self, model: &str, segment_id: &str, role: SegmentRole) -> Option<&[f64]> {
        self.map.get(&(model.to_owned(), segment_id.to_owned(), role)).map(Vec::as_slice)
    }

    /// Embedding model names in lexicographic order.
    pub fn models(&self) -> Vec<String> {
        let mut m: Vec<String> = self.map.keys().map(|k| k.0.clone()).collect();
        m.dedup();
        m
    }

    /// Whether `model` has any embedding for `segment_id`.
    pub fn has_segment(&self, model: &str, segment_id: &str) -> bool {
        [SegmentRole::Prompt, SegmentRole::Positive, SegmentRole::Negative, SegmentRole::Generation]
            .iter()
            .any(|r| self.get(model, segment_id, *r).is_some())
    }
}
