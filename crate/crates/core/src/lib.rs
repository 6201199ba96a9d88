//! Evaluation toolkit for spoken language models over token-level NLL traces.
//!
//! The pipeline reads per-token negative log-likelihood traces produced by an
//! external extractor, scores contrastive pairs with several likelihood
//! estimators, attributes accuracy to token types with exact Shapley values,
//! scores generated continuations with embedding judges and correlates any
//! of these with human ratings.

pub mod attribution;
pub mod benchmark;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod judge;
pub mod losscurve;
pub mod stats;
pub mod synth;
pub mod trace;

pub use error::{EvalError, PairFailure, Result};
