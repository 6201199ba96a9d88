use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the evaluation pipeline.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{location}: schema error: {message}")]
    Schema { location: String, message: String },
    #[error("{location}: invariant violated: {message}")]
    Invariant { location: String, message: String },
    #[error("unknown token type(s): {0:?}")]
    UnknownTokenType(Vec<String>),
    #[error("channel selection matched no channel")]
    EmptySelection,
    #[error("trace {0} carries no token ids")]
    MissingTokenIds(String),
    #[error("no frames in scope: {0}")]
    NoFramesInScope(String),
    #[error("trace {0} has no prompt_end_frame")]
    MissingPrompt(String),
    #[error("trace {0} lacks response-only NLL on a required frame")]
    MissingUnconditional(String),
    #[error("invalid estimator configuration: {0}")]
    Config(String),
    #[error("pair {pair_id}: {source}")]
    Pair {
        pair_id: String,
        #[source]
        source: Box<EvalError>,
    },
    #[error("{} pair(s) failed: {}", .0.len(), .0.iter().map(|f| f.pair_id.as_str()).collect::<Vec<_>>().join(", "))]
    PartialFailure(Vec<PairFailure>),
    #[error("too many players: {0} (at most 8)")]
    TooManyPlayers(usize),
    #[error("incomplete coalition table: {0}")]
    IncompleteTable(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("missing embeddings for {} (model, pair) combination(s): {}", .0.len(), fmt_missing(.0))]
    MissingEmbeddings(Vec<(String, String)>),
    #[error("judge for task {task} is not qualified (dev {dev_accuracy:.1} < topline {topline:.1})")]
    UnqualifiedJudge { task: String, dev_accuracy: f64, topline: f64 },
    #[error("no judge registered for task {0}")]
    NoJudge(String),
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("key mismatch between score columns: {0:?}")]
    KeyMismatch(Vec<String>),
    #[error("empty MOS cell(s): {0:?}")]
    EmptyCell(Vec<String>),
    #[error("no pair covers the requested window")]
    NoOverlap,
    #[error("cannot load {reference}: {message}")]
    Load { reference: String, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn fmt_missing(items: &[(String, String)]) -> String {
    let shown: Vec<String> = items.iter().take(8).map(|(m, p)| format!("({m}, {p})")).collect();
    let more = items.len().saturating_sub(8);
    if more > 0 {
        format!("{} ... and {more} more", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

/// One pair that could not be loaded or scored.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PairFailure {
    pub pair_id: String,
    pub reason: String,
}

impl EvalError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EvalError::Io { path: path.into(), source }
    }

    pub(crate) fn schema(location: impl Into<String>, message: impl Into<String>) -> Self {
        EvalError::Schema { location: location.into(), message: message.into() }
    }

    pub(crate) fn invariant(location: impl Into<String>, message: impl Into<String>) -> Self {
        EvalError::Invariant { location: location.into(), message: message.into() }
    }

    pub(crate) fn for_pair(self, pair_id: &str) -> Self {
        EvalError::Pair { pair_id: pair_id.to_owned(), source: Box::new(self) }
    }

    /// True for errors caused by the input data rather than by configuration.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, EvalError::Config(_) | EvalError::InvalidArgument(_) | EvalError::TooManyPlayers(_))
    }
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
