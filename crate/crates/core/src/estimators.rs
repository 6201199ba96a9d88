//! Likelihood estimators over token traces.
//!
//! All estimators reduce to a mean over a set of (channel, frame) tokens with
//! equal weight per token. They differ in which frames they cover:
//!
//! * global: every frame in scope (whole sequence or the response only);
//! * localized: `δ` frames starting at the prompt boundary;
//! * windowed: the `δ`-frame window with the largest mean, scanned over the scope;
//! * normalized: like global/localized, but each token contributes
//!   `nll_conditional - nll_response_only`.
//!
//! Sums always run channel-major, then frame order, so two estimators that
//! cover the same span return bit-identical values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::trace::TokenTrace;

pub const DEFAULT_WINDOW_SECONDS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Global,
    Localized,
    Windowed,
    NormalizedGlobal,
    NormalizedLocalized,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Global, Method::NormalizedGlobal, Method::Windowed, Method::Localized, Method::NormalizedLocalized];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Global => "global",
            Method::Localized => "localized",
            Method::Windowed => "windowed",
            Method::NormalizedGlobal => "normalized_global",
            Method::NormalizedLocalized => "normalized_localized",
        }
    }

    /// Methods that need a prompt boundary.
    pub fn needs_prompt(self) -> bool {
        !matches!(self, Method::Global | Method::Windowed)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| EvalError::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    ResponseOnly,
    FullSequence,
}

impl FromStr for Scope {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "response_only" => Ok(Scope::ResponseOnly),
            "full_sequence" => Ok(Scope::FullSequence),
            _ => Err(EvalError::Config(format!("unknown scope {s:?}"))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::ResponseOnly => "response_only",
            Scope::FullSequence => "full_sequence",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub method: Method,
    pub window_seconds: f64,
    pub scope: Scope,
}

impl EstimatorConfig {
    /// Default configuration for `method`: global and windowed scan the full
    /// sequence, the others score the response.
    pub fn new(method: Method) -> Self {
        let scope = match method {
            Method::Global | Method::Windowed => Scope::FullSequence,
            _ => Scope::ResponseOnly,
        };
        Self { method, window_seconds: DEFAULT_WINDOW_SECONDS, scope }
    }

    pub fn with_window_seconds(mut self, seconds: f64) -> Self {
        self.window_seconds = seconds;
        self
    }

    pub fn with_scope(mut self, scope: Scope) -> Self {
        self.scope = scope;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_seconds.is_finite() && self.window_seconds > 0.0) {
            return Err(EvalError::Config(format!("window_seconds must be > 0, got {}", self.window_seconds)));
        }
        if self.method.needs_prompt() && self.scope != Scope::ResponseOnly {
            return Err(EvalError::Config(format!("method {} requires response_only scope", self.method)));
        }
        Ok(())
    }

    /// `δ` in frames: `round(window_seconds * frame_rate)`, at least one.
    pub fn window_frames(&self, frame_rate_hz: f64) -> usize {
        ((self.window_seconds * frame_rate_hz).round() as usize).max(1)
    }
}

/// Mean NLL (nats per token) and how much of the trace produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllScore {
    pub value: f64,
    /// Time frames with at least one contributing token.
    pub frames_used: usize,
    /// Channels with at least one contributing token.
    pub channels_used: usize,
    pub tokens_used: usize,
}

impl NllScore {
    pub fn perplexity(&self) -> f64 {
        self.value.exp()
    }
}

/// Which per-token quantity is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TokenValue {
    Conditional,
    Normalized,
}

/// Sums over one frame span, kept per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanSums {
    pub lo: usize,
    pub hi: usize,
    /// `(sum, token count)` per channel in trace order.
    pub per_channel: Vec<(f64, usize)>,
    pub frames_used: usize,
}

impl SpanSums {
    pub fn tokens(&self) -> usize {
        self.per_channel.iter().map(|c| c.1).sum()
    }

    pub fn sum(&self) -> f64 {
        self.per_channel.iter().map(|c| c.0).sum()
    }

    fn score(&self) -> Option<NllScore> {
        let tokens = self.tokens();
        (tokens > 0).then(|| NllScore {
            value: self.sum() / tokens as f64,
            frames_used: self.frames_used,
            channels_used: self.per_channel.iter().filter(|c| c.1 > 0).count(),
            tokens_used: tokens,
        })
    }
}

pub(crate) fn span_sums(trace: &TokenTrace, lo: usize, hi: usize, kind: TokenValue) -> Result<SpanSums> {
    let mut per_channel = Vec::with_capacity(trace.num_channels());
    let mut frame_hit = vec![false; hi.saturating_sub(lo)];
    for ch in trace.channels() {
        let cond = ch.nll_conditional();
        let ro = match kind {
            TokenValue::Conditional => None,
            TokenValue::Normalized => Some(
                ch.nll_response_only()
                    .ok_or_else(|| EvalError::MissingUnconditional(trace.utterance_id().to_owned()))?,
            ),
        };
        let mut sum = 0.0;
        let mut count = 0;
        for t in lo..hi {
            if !ch.is_valid(t) {
                continue;
            }
            let v = match ro {
                None => cond[t],
                Some(ro) => {
                    let u = ro[t].ok_or_else(|| EvalError::MissingUnconditional(trace.utterance_id().to_owned()))?;
                    cond[t] - u
                }
            };
            sum += v;
            count += 1;
            frame_hit[t - lo] = true;
        }
        per_channel.push((sum, count));
    }
    Ok(SpanSums { lo, hi, per_channel, frames_used: frame_hit.iter().filter(|h| **h).count() })
}

fn prompt_end(trace: &TokenTrace) -> Result<usize> {
    trace.prompt_end_frame().ok_or_else(|| EvalError::MissingPrompt(trace.utterance_id().to_owned()))
}

fn scope_start(trace: &TokenTrace, scope: Scope) -> Result<usize> {
    match scope {
        Scope::FullSequence => Ok(0),
        Scope::ResponseOnly => prompt_end(trace),
    }
}

fn no_frames(trace: &TokenTrace, what: &str) -> EvalError {
    EvalError::NoFramesInScope(format!("{} ({what})", trace.utterance_id()))
}

/// Global token NLL over the flattened multi-channel stream.
pub fn nll_global(trace: &TokenTrace, scope: Scope) -> Result<NllScore> {
    let lo = scope_start(trace, scope)?;
    span_sums(trace, lo, trace.len(), TokenValue::Conditional)?.score().ok_or_else(|| no_frames(trace, "global"))
}

/// Mean NLL over `δ` frames starting at the prompt boundary.
pub fn nll_localized(trace: &TokenTrace, config: &EstimatorConfig) -> Result<NllScore> {
    let (lo, hi) = localized_span(trace, config)?;
    span_sums(trace, lo, hi, TokenValue::Conditional)?.score().ok_or_else(|| no_frames(trace, "localized"))
}

fn localized_span(trace: &TokenTrace, config: &EstimatorConfig) -> Result<(usize, usize)> {
    let tp = prompt_end(trace)?;
    if tp >= trace.len() {
        return Err(no_frames(trace, "prompt ends at sequence end"));
    }
    let delta = config.window_frames(trace.frame_rate_hz());
    Ok((tp, (tp + delta).min(trace.len())))
}

/// Largest window-mean NLL over all `δ`-frame windows in scope.
pub fn nll_windowed(trace: &TokenTrace, config: &EstimatorConfig) -> Result<NllScore> {
    windowed_best(trace, config)?.score().ok_or_else(|| no_frames(trace, "windowed"))
}

fn windowed_best(trace: &TokenTrace, config: &EstimatorConfig) -> Result<SpanSums> {
    let start = scope_start(trace, config.scope)?;
    let end = trace.len();
    let delta = config.window_frames(trace.frame_rate_hz());
    let last_start = if end - start <= delta { start } else { end - delta };
    let mut best: Option<(f64, SpanSums)> = None;
    for i in start..=last_start {
        let sums = span_sums(trace, i, (i + delta).min(end), TokenValue::Conditional)?;
        let Some(s) = sums.score() else { continue };
        if best.as_ref().is_none_or(|(v, _)| s.value > *v) {
            best = Some((s.value, sums));
        }
    }
    best.map(|(_, s)| s).ok_or_else(|| no_frames(trace, "windowed"))
}

/// Mean of `nll_conditional - nll_response_only` over the response window
/// (the whole response for `NormalizedGlobal`, `δ` frames for `NormalizedLocalized`).
pub fn nll_normalized(trace: &TokenTrace, config: &EstimatorConfig) -> Result<NllScore> {
    let (lo, hi) = normalized_span(trace, config)?;
    span_sums(trace, lo, hi, TokenValue::Normalized)?.score().ok_or_else(|| no_frames(trace, "normalized"))
}

fn normalized_span(trace: &TokenTrace, config: &EstimatorConfig) -> Result<(usize, usize)> {
    if trace.channels().iter().any(|c| c.nll_response_only().is_none()) {
        return Err(EvalError::MissingUnconditional(trace.utterance_id().to_owned()));
    }
    match config.method {
        Method::NormalizedLocalized => localized_span(trace, config),
        _ => {
            let tp = prompt_end(trace)?;
            Ok((tp, trace.len()))
        }
    }
}

/// Score a trace with the configured estimator.
pub fn score(trace: &TokenTrace, config: &EstimatorConfig) -> Result<NllScore> {
    config.validate()?;
    match config.method {
        Method::Global => nll_global(trace, config.scope),
        Method::Localized => nll_localized(trace, config),
        Method::Windowed => nll_windowed(trace, config),
        Method::NormalizedGlobal | Method::NormalizedLocalized => nll_normalized(trace, config),
    }
}

/// Per-channel sums over the span the estimator selects. For the windowed
/// estimator this is the maximizing window of the full trace.
pub fn score_span(trace: &TokenTrace, config: &EstimatorConfig) -> Result<SpanSums> {
    config.validate()?;
    let sums = match config.method {
        Method::Global => {
            let lo = scope_start(trace, config.scope)?;
            span_sums(trace, lo, trace.len(), TokenValue::Conditional)?
        }
        Method::Localized => {
            let (lo, hi) = localized_span(trace, config)?;
            span_sums(trace, lo, hi, TokenValue::Conditional)?
        }
        Method::Windowed => windowed_best(trace, config)?,
        Method::NormalizedGlobal | Method::NormalizedLocalized => {
            let (lo, hi) = normalized_span(trace, config)?;
            span_sums(trace, lo, hi, TokenValue::Normalized)?
        }
    };
    if sums.tokens() == 0 {
        return Err(no_frames(trace, config.method.as_str()));
    }
    Ok(sums)
}

/// One line of a per-utterance score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub utterance_id: String,
    pub method: Method,
    pub value: f64,
    pub frames_used: usize,
}
