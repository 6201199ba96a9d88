use crate::error::{EvalError, Result};

use super::TokenTrace;

/// A positive/negative trace pair that shares a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastivePair {
    pair_id: String,
    task: String,
    positive: TokenTrace,
    negative: TokenTrace,
    continuation: Option<TokenTrace>,
    has_shared_prompt: bool,
}

impl ContrastivePair {
    /// Validates the pair. When the prompt is shared but neither trace carries
    /// a prompt boundary, it is recovered from the token ids as the longest
    /// common prefix.
    pub fn new(
        pair_id: impl Into<String>,
        task: impl Into<String>,
        positive: TokenTrace,
        negative: TokenTrace,
        continuation: Option<TokenTrace>,
        has_shared_prompt: bool,
    ) -> Result<Self> {
        let pair_id = pair_id.into();
        let loc = format!("pair {pair_id}");
        let same_layout = positive.channels().len() == negative.channels().len()
            && positive
                .channels()
                .iter()
                .zip(negative.channels())
                .all(|(a, b)| a.name() == b.name() && a.token_type() == b.token_type());
        if !same_layout {
            return Err(EvalError::invariant(&loc, "positive and negative traces declare different channel sets"));
        }
        if positive.frame_rate_hz() != negative.frame_rate_hz() {
            return Err(EvalError::invariant(
                &loc,
                format!("frame rates differ: {} vs {}", positive.frame_rate_hz(), negative.frame_rate_hz()),
            ));
        }
        let (positive, negative) = if has_shared_prompt {
            match (positive.prompt_end_frame(), negative.prompt_end_frame()) {
                (Some(a), Some(b)) if a == b => (positive, negative),
                (Some(a), Some(b)) => {
                    return Err(EvalError::invariant(
                        &loc,
                        format!("shared prompt but prompt_end_frame differs: {a} vs {b}"),
                    ))
                }
                (None, None) => {
                    let tp = longest_common_prefix_frames(&positive, &negative).map_err(|e| e.for_pair(&pair_id))?;
                    (positive.with_prompt_end_frame(tp)?, negative.with_prompt_end_frame(tp)?)
                }
                _ => return Err(EvalError::invariant(&loc, "shared prompt but only one trace has prompt_end_frame")),
            }
        } else {
            (positive, negative)
        };
        Ok(Self { pair_id, task: task.into(), positive, negative, continuation, has_shared_prompt })
    }

    pub fn pair_id(&self) -> &str {
        &self.pair_id
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn positive(&self) -> &TokenTrace {
        &self.positive
    }

    pub fn negative(&self) -> &TokenTrace {
        &self.negative
    }

    pub fn continuation(&self) -> Option<&TokenTrace> {
        self.continuation.as_ref()
    }

    pub fn has_shared_prompt(&self) -> bool {
        self.has_shared_prompt
    }
}

/// Largest `t` such that the token ids of `a` and `b` agree on every channel
/// for all frames `< t`.
pub fn longest_common_prefix_frames(a: &TokenTrace, b: &TokenTrace) -> Result<usize> {
    if a.channels().len() != b.channels().len()
        || a.channels().iter().zip(b.channels()).any(|(x, y)| x.name() != y.name())
    {
        return Err(EvalError::invariant(
            format!("traces {} / {}", a.utterance_id(), b.utterance_id()),
            "channel sets differ",
        ));
    }
    let mut prefix = a.len().min(b.len());
    for (ca, cb) in a.channels().iter().zip(b.channels()) {
        let ia = ca.token_ids().ok_or_else(|| EvalError::MissingTokenIds(a.utterance_id().to_owned()))?;
        let ib = cb.token_ids().ok_or_else(|| EvalError::MissingTokenIds(b.utterance_id().to_owned()))?;
        let agree = ia.iter().zip(ib).take_while(|(x, y)| x == y).count();
        prefix = prefix.min(agree);
    }
    Ok(prefix)
}
