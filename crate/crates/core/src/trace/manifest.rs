use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

use super::{load_traces, ContrastivePair, TokenTrace};

/// Reference to a trace: `path` (file with one record) or `path#utterance_id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TraceRef {
    pub file: String,
    pub utterance_id: Option<String>,
}

impl TraceRef {
    pub fn parse(s: &str) -> Self {
        match s.split_once('#') {
            Some((f, id)) => TraceRef { file: f.to_owned(), utterance_id: Some(id.to_owned()) },
            None => TraceRef { file: s.to_owned(), utterance_id: None },
        }
    }
}

impl fmt::Display for TraceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.utterance_id {
            Some(id) => write!(f, "{}#{}", self.file, id),
            None => f.write_str(&self.file),
        }
    }
}

impl Serialize for TraceRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TraceRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(TraceRef::parse(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub pair_id: String,
    pub task: String,
    pub positive: TraceRef,
    pub negative: TraceRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation: Option<TraceRef>,
    #[serde(default = "default_true")]
    pub has_shared_prompt: bool,
}

fn default_true() -> bool {
    true
}

/// Benchmark description: tasks, token types, pair index and human toplines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkManifest {
    pub benchmark_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub tasks: Vec<String>,
    pub token_types: Vec<String>,
    pub pairs: Vec<PairEntry>,
    #[serde(default)]
    pub human_topline: BTreeMap<String, f64>,
    /// Directory that relative trace paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl BenchmarkManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
        let mut m: BenchmarkManifest =
            serde_json::from_str(&text).map_err(|e| EvalError::schema(path.display().to_string(), e.to_string()))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        for entry in &m.pairs {
            for r in [Some(&entry.positive), Some(&entry.negative), entry.continuation.as_ref()].into_iter().flatten() {
                let p = m.resolve(&r.file);
                if !p.is_file() {
                    return Err(EvalError::io(
                        p,
                        std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            format!("referenced by pair {}", entry.pair_id),
                        ),
                    ));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serialization cannot fail");
        std::fs::write(path, text + "\n").map_err(|e| EvalError::io(path, e))
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        let loc = format!("manifest {}", self.benchmark_name);
        if self.tasks.is_empty() {
            return Err(EvalError::invariant(&loc, "no tasks declared"));
        }
        let tasks: BTreeSet<&str> = self.tasks.iter().map(String::as_str).collect();
        if tasks.len() != self.tasks.len() {
            return Err(EvalError::invariant(&loc, "duplicate task names"));
        }
        let types: BTreeSet<&str> = self.token_types.iter().map(String::as_str).collect();
        if types.is_empty() || types.len() != self.token_types.len() {
            return Err(EvalError::invariant(&loc, "token_types must be non-empty and unique"));
        }
        let mut ids = BTreeSet::new();
        for p in &self.pairs {
            if !ids.insert(p.pair_id.as_str()) {
                return Err(EvalError::invariant(&loc, format!("duplicate pair id {}", p.pair_id)));
            }
            if !tasks.contains(p.task.as_str()) {
                return Err(EvalError::invariant(&loc, format!("pair {} has undeclared task {}", p.pair_id, p.task)));
            }
        }
        for (task, v) in &self.human_topline {
            if !(0.0..=100.0).contains(v) {
                return Err(EvalError::invariant(&loc, format!("human_topline[{task}] = {v} outside [0, 100]")));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, file: &str) -> PathBuf {
        let p = Path::new(file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn token_type_set(&self) -> BTreeSet<String> {
        self.token_types.iter().cloned().collect()
    }

    pub fn model_name(&self) -> &str {
        self.model.as_deref().unwrap_or("unknown")
    }
}

type Cached = std::result::Result<Arc<Vec<TokenTrace>>, String>;

/// Loads trace files referenced by a manifest, each file at most once.
#[derive(Debug)]
pub struct TraceStore<'m> {
    manifest: &'m BenchmarkManifest,
    cache: Mutex<HashMap<PathBuf, Cached>>,
}

impl<'m> TraceStore<'m> {
    pub fn new(manifest: &'m BenchmarkManifest) -> Self {
        Self { manifest, cache: Mutex::new(HashMap::new()) }
    }

    /// Parse every referenced file in parallel.
    pub fn preload(&self) {
        let files: BTreeSet<PathBuf> = self
            .manifest
            .pairs
            .iter()
            .flat_map(|p| [Some(&p.positive), Some(&p.negative), p.continuation.as_ref()])
            .flatten()
            .map(|r| self.manifest.resolve(&r.file))
            .collect();
        let loaded: Vec<(PathBuf, Cached)> = files
            .into_par_iter()
            .map(|f| {
                let r = load_traces(&f).map(Arc::new).map_err(|e| e.to_string());
                (f, r)
            })
            .collect();
        let mut cache = self.cache.lock().expect("trace cache poisoned");
        cache.extend(loaded);
    }

    fn file(&self, path: &Path) -> Cached {
        if let Some(c) = self.cache.lock().expect("trace cache poisoned").get(path) {
            return c.clone();
        }
        let r = load_traces(path).map(Arc::new).map_err(|e| e.to_string());
        self.cache.lock().expect("trace cache poisoned").insert(path.to_path_buf(), r.clone());
        r
    }

    pub fn get(&self, r: &TraceRef) -> Result<TokenTrace> {
        let path = self.manifest.resolve(&r.file);
        let traces = self.file(&path).map_err(|message| EvalError::Load { reference: r.to_string(), message })?;
        let trace =
            match &r.utterance_id {
                Some(id) => traces.iter().find(|t| t.utterance_id() == id).cloned().ok_or_else(|| {
                    EvalError::schema(r.to_string(), format!("no utterance {id} in {}", path.display()))
                })?,
                None if traces.len() == 1 => traces[0].clone(),
                None => {
                    return Err(EvalError::schema(
                        r.to_string(),
                        format!("{} records in file; reference one with '#utterance_id'", traces.len()),
                    ))
                }
            };
        let declared = self.manifest.token_type_set();
        if let Some(bad) = trace.channels().iter().find(|c| !declared.contains(c.token_type())) {
            return Err(EvalError::invariant(
                r.to_string(),
                format!("channel {} has token type {} not declared by the manifest", bad.name(), bad.token_type()),
            ));
        }
        Ok(trace)
    }

    pub fn load_pair(&self, entry: &PairEntry) -> Result<ContrastivePair> {
        let inner = || -> Result<ContrastivePair> {
            let pos = self.get(&entry.positive)?;
            let neg = self.get(&entry.negative)?;
            let cont = entry.continuation.as_ref().map(|c| self.get(c)).transpose()?;
            ContrastivePair::new(&entry.pair_id, &entry.task, pos, neg, cont, entry.has_shared_prompt)
        };
        inner().map_err(|e| match e {
            EvalError::Pair { .. } => e,
            other => other.for_pair(&entry.pair_id),
        })
    }
}
