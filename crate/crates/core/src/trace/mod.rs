//! Token-level likelihood traces and their line-delimited file format.
//!
//! A trace holds one utterance: one or more channels (codebook layers or
//! token-type streams) that share a single frame clock. Each channel carries
//! the conditional NLL `-log p(x_t | x_<t)` per frame and, optionally, the
//! NLL of the same token with context truncated at the prompt boundary.
//!
//! Records are validated on construction and immutable afterwards.

mod embedding;
mod manifest;
mod pair;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{EvalError, Result};

pub use embedding::{load_embeddings, write_embeddings, EmbeddingRecord, EmbeddingStore, SegmentRole};
pub use manifest::{BenchmarkManifest, PairEntry, TraceRef, TraceStore};
pub use pair::{longest_common_prefix_frames, ContrastivePair};

/// One tagged sub-stream of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStream {
    name: String,
    token_type: String,
    nll_conditional: Vec<f64>,
    nll_response_only: Option<Vec<Option<f64>>>,
    valid_mask: Option<Vec<bool>>,
    token_ids: Option<Vec<i64>>,
}

impl ChannelStream {
    pub fn new(name: impl Into<String>, token_type: impl Into<String>, nll_conditional: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            token_type: token_type.into(),
            nll_conditional,
            nll_response_only: None,
            valid_mask: None,
            token_ids: None,
        }
    }

    /// Response-only NLL; `None` entries are the "absent" sentinel used before the prompt boundary.
    pub fn with_response_only(mut self, values: Vec<Option<f64>>) -> Self {
        self.nll_response_only = Some(values);
        self
    }

    pub fn with_valid_mask(mut self, mask: Vec<bool>) -> Self {
        self.valid_mask = Some(mask);
        self
    }

    pub fn with_token_ids(mut self, ids: Vec<i64>) -> Self {
        self.token_ids = Some(ids);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn token_type(&self) -> &str {
        &self.token_type
    }

    pub fn nll_conditional(&self) -> &[f64] {
        &self.nll_conditional
    }

    pub fn nll_response_only(&self) -> Option<&[Option<f64>]> {
        self.nll_response_only.as_deref()
    }

    pub fn valid_mask(&self) -> Option<&[bool]> {
        self.valid_mask.as_deref()
    }

    pub fn token_ids(&self) -> Option<&[i64]> {
        self.token_ids.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nll_conditional.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nll_conditional.is_empty()
    }

    /// Whether frame `t` participates in aggregates.
    #[inline]
    pub fn is_valid(&self, t: usize) -> bool {
        self.valid_mask.as_ref().is_none_or(|m| m[t])
    }
}

/// Per-token NLL streams for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTrace {
    utterance_id: String,
    frame_rate_hz: f64,
    prompt_end_frame: Option<usize>,
    channels: Vec<ChannelStream>,
    metadata: BTreeMap<String, String>,
    declared_types: BTreeSet<String>,
}

impl TokenTrace {
    pub fn new(
        utterance_id: impl Into<String>,
        frame_rate_hz: f64,
        prompt_end_frame: Option<usize>,
        channels: Vec<ChannelStream>,
    ) -> Result<Self> {
        let declared_types = channels.iter().map(|c| c.token_type.clone()).collect();
        let trace = Self {
            utterance_id: utterance_id.into(),
            frame_rate_hz,
            prompt_end_frame,
            channels,
            metadata: BTreeMap::new(),
            declared_types,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, String>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn prompt_end_frame(&self) -> Option<usize> {
        self.prompt_end_frame
    }

    pub fn channels(&self) -> &[ChannelStream] {
        &self.channels
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Token types declared by the trace as loaded. Channel views keep the
    /// declared set of the trace they were selected from.
    pub fn declared_types(&self) -> &BTreeSet<String> {
        &self.declared_types
    }

    fn validate(&self) -> Result<()> {
        let loc = format!("trace {}", self.utterance_id);
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(EvalError::invariant(&loc, format!("frame_rate_hz must be > 0, got {}", self.frame_rate_hz)));
        }
        if self.channels.is_empty() {
            return Err(EvalError::invariant(&loc, "trace has no channels"));
        }
        let t = self.channels[0].len();
        if t == 0 {
            return Err(EvalError::invariant(&loc, "channels must have at least one frame"));
        }
        if let Some(tp) = self.prompt_end_frame {
            if tp >= t {
                return Err(EvalError::invariant(&loc, format!("prompt_end_frame {tp} must be < T={t}")));
            }
        }
        let mut names = BTreeSet::new();
        for ch in &self.channels {
            let cloc = format!("{loc}, channel {}", ch.name);
            if !names.insert(ch.name.as_str()) {
                return Err(EvalError::invariant(&cloc, "duplicate channel name"));
            }
            if ch.len() != t {
                return Err(EvalError::invariant(&cloc, format!("length {} differs from T={t}", ch.len())));
            }
            for (i, v) in ch.nll_conditional.iter().enumerate() {
                if !v.is_finite() || *v < 0.0 {
                    return Err(EvalError::invariant(
                        &cloc,
                        format!("nll_conditional[{i}] = {v} is not a finite non-negative value"),
                    ));
                }
            }
            if let Some(ro) = &ch.nll_response_only {
                let tp = self
                    .prompt_end_frame
                    .ok_or_else(|| EvalError::invariant(&cloc, "nll_response_only requires prompt_end_frame"))?;
                if ro.len() != t {
                    return Err(EvalError::invariant(
                        &cloc,
                        format!("nll_response_only length {} differs from T={t}", ro.len()),
                    ));
                }
                for (i, v) in ro.iter().enumerate() {
                    match v {
                        Some(_) if i < tp => {
                            return Err(EvalError::invariant(
                                &cloc,
                                format!("nll_response_only[{i}] precedes prompt_end_frame {tp} and must be null"),
                            ))
                        }
                        Some(v) if !v.is_finite() || *v < 0.0 => {
                            return Err(EvalError::invariant(
                                &cloc,
                                format!("nll_response_only[{i}] = {v} is not a finite non-negative value"),
                            ))
                        }
                        _ => {}
                    }
                }
            }
            if let Some(m) = &ch.valid_mask {
                if m.len() != t {
                    return Err(EvalError::invariant(
                        &cloc,
                        format!("valid_mask length {} differs from T={t}", m.len()),
                    ));
                }
            }
            if let Some(ids) = &ch.token_ids {
                if ids.len() != t {
                    return Err(EvalError::invariant(
                        &cloc,
                        format!("token_ids length {} differs from T={t}", ids.len()),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Copy of this trace with the prompt boundary set.
    pub fn with_prompt_end_frame(&self, tp: usize) -> Result<Self> {
        let mut out = self.clone();
        out.prompt_end_frame = Some(tp);
        out.validate()?;
        Ok(out)
    }

    /// View containing only channels whose token type is in `types`.
    pub fn select_channels(&self, types: &BTreeSet<String>) -> Result<Self> {
        if types.is_empty() {
            return Err(EvalError::EmptySelection);
        }
        let unknown: Vec<String> = types.difference(&self.declared_types).cloned().collect();
        if !unknown.is_empty() {
            return Err(EvalError::UnknownTokenType(unknown));
        }
        let channels: Vec<ChannelStream> =
            self.channels.iter().filter(|c| types.contains(&c.token_type)).cloned().collect();
        if channels.is_empty() {
            return Err(EvalError::EmptySelection);
        }
        Ok(Self {
            utterance_id: self.utterance_id.clone(),
            frame_rate_hz: self.frame_rate_hz,
            prompt_end_frame: self.prompt_end_frame,
            channels,
            metadata: self.metadata.clone(),
            declared_types: self.declared_types.clone(),
        })
    }

    /// Canonical single-line JSON encoding.
    pub fn to_json_line(&self) -> String {
        let raw = RawTrace {
            utterance_id: self.utterance_id.clone(),
            frame_rate_hz: self.frame_rate_hz,
            prompt_end_frame: self.prompt_end_frame.map(|v| v as u64),
            channels: self
                .channels
                .iter()
                .map(|c| RawChannel {
                    name: c.name.clone(),
                    token_type: c.token_type.clone(),
                    nll_conditional: c.nll_conditional.iter().map(|v| Num(*v)).collect(),
                    nll_response_only: c.nll_response_only.as_ref().map(|v| v.iter().map(|x| x.map(Num)).collect()),
                    valid_mask: c.valid_mask.clone(),
                    token_ids: c.token_ids.clone(),
                })
                .collect(),
            metadata: if self.metadata.is_empty() { None } else { Some(self.metadata.clone()) },
        };
        serde_json::to_string(&raw).expect("trace serialization cannot fail")
    }

    /// Parse one line of a trace file.
    pub fn from_json_line(line: &str, location: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(line).map_err(|e| EvalError::schema(location, format!("invalid JSON: {e}")))?;
        let obj = value.as_object().ok_or_else(|| EvalError::schema(location, "record must be a JSON object"))?;
        for field in ["utterance_id", "frame_rate_hz", "prompt_end_frame", "channels"] {
            if !obj.contains_key(field) {
                return Err(EvalError::schema(location, format!("missing field '{field}'")));
            }
        }
        let raw: RawTrace = serde_json::from_value(value).map_err(|e| EvalError::schema(location, e.to_string()))?;
        let channels = raw
            .channels
            .into_iter()
            .map(|c| ChannelStream {
                name: c.name,
                token_type: c.token_type,
                nll_conditional: c.nll_conditional.into_iter().map(|n| n.0).collect(),
                nll_response_only: c.nll_response_only.map(|v| v.into_iter().map(|x| x.map(|n| n.0)).collect()),
                valid_mask: c.valid_mask,
                token_ids: c.token_ids,
            })
            .collect();
        let tp = raw.prompt_end_frame.map(|v| v as usize);
        let trace = TokenTrace::new(raw.utterance_id, raw.frame_rate_hz, tp, channels).map_err(|e| match e {
            EvalError::Invariant { location: l, message } => EvalError::invariant(format!("{location}: {l}"), message),
            other => other,
        })?;
        Ok(trace.with_metadata(raw.metadata.unwrap_or_default()))
    }
}

/// Load every record of a trace file.
pub fn load_traces(path: impl AsRef<Path>) -> Result<Vec<TokenTrace>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| EvalError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| EvalError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("{}:{}", path.display(), i + 1);
        out.push(TokenTrace::from_json_line(&line, &loc)?);
    }
    Ok(out)
}

/// Load a trace file that holds exactly one record.
pub fn load_trace(path: impl AsRef<Path>) -> Result<TokenTrace> {
    let path = path.as_ref();
    let mut all = load_traces(path)?;
    match all.len() {
        1 => Ok(all.remove(0)),
        n => Err(EvalError::schema(path.display().to_string(), format!("expected exactly one record, found {n}"))),
    }
}

/// Write traces in canonical form, one per line.
pub fn write_traces<'a>(path: impl AsRef<Path>, traces: impl IntoIterator<Item = &'a TokenTrace>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| EvalError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in traces {
        writeln!(w, "{}", t.to_json_line()).map_err(|e| EvalError::io(path, e))?;
    }
    w.flush().map_err(|e| EvalError::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrace {
    utterance_id: String,
    frame_rate_hz: f64,
    prompt_end_frame: Option<u64>,
    channels: Vec<RawChannel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<BTreeMap<String, String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    name: String,
    token_type: String,
    nll_conditional: Vec<Num>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nll_response_only: Option<Vec<Option<Num>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    valid_mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token_ids: Option<Vec<i64>>,
}

/// A JSON number that also accepts the strings `"NaN"`, `"Infinity"` and
/// `"-Infinity"` so such values surface as invariant violations rather than
/// parse failures.
#[derive(Clone, Copy)]
struct Num(f64);

impl Serialize for Num {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Num(v)),
            Repr::Str(s) => match s.to_ascii_lowercase().as_str() {
                "nan" => Ok(Num(f64::NAN)),
                "inf" | "infinity" | "+infinity" => Ok(Num(f64::INFINITY)),
                "-inf" | "-infinity" => Ok(Num(f64::NEG_INFINITY)),
                _ => Err(serde::de::Error::custom(format!("expected a number, found string {s:?}"))),
            },
        }
    }
}
