//! Transition-aligned mean NLL curves for positive and negative samples.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::trace::{ContrastivePair, TokenTrace};

// absorbs rounding in (t - t_p) / rate before flooring to a bin
const BIN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub before_s: f64,
    pub after_s: f64,
    /// Bin width in seconds; `None` means one frame.
    pub bin_s: Option<f64>,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self { before_s: 2.0, after_s: 3.0, bin_s: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub time_s: f64,
    pub series: String,
    pub mean_nll: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedCurve {
    pub bin_s: f64,
    /// Sorted by series, then time.
    pub rows: Vec<CurveRow>,
}

impl AlignedCurve {
    pub fn series(&self, name: &str) -> impl Iterator<Item = &CurveRow> {
        let name = name.to_owned();
        self.rows.iter().filter(move |r| r.series == name)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r).map_err(|e| EvalError::schema("curve", e.to_string()))?;
        }
        w.flush().map_err(|e| EvalError::io("curve", e))
    }
}

/// Per-bin mean over the tokens of one trace.
fn trace_bins(trace: &TokenTrace, bin_s: f64, lo: i64, hi: i64) -> Result<BTreeMap<i64, f64>> {
    let tp = trace.prompt_end_frame().ok_or_else(|| EvalError::MissingPrompt(trace.utterance_id().to_owned()))?;
    let rate = trace.frame_rate_hz();
    let mut acc: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for t in 0..trace.len() {
        let rel = (t as f64 - tp as f64) / rate;
        let bin = (rel / bin_s + BIN_EPS).floor() as i64;
        if bin < lo || bin >= hi {
            continue;
        }
        for ch in trace.channels() {
            if ch.is_valid(t) {
                let e = acc.entry(bin).or_default();
                e.0 += ch.nll_conditional()[t];
                e.1 += 1;
            }
        }
    }
    Ok(acc.into_iter().map(|(b, (s, n))| (b, s / n as f64)).collect())
}

/// Re-index frames to seconds relative to the prompt boundary, bin them and
/// average across samples. Each sample contributes its own per-bin mean to a
/// bin; bins no sample covers are left out.
pub fn align_and_average(
    pairs: &[ContrastivePair],
    config: &CurveConfig,
    types: Option<&BTreeSet<String>>,
) -> Result<AlignedCurve> {
    if !(config.before_s >= 0.0 && config.after_s > 0.0) {
        return Err(EvalError::Config("curve window needs before_s >= 0 and after_s > 0".into()));
    }
    let bin_s = match config.bin_s {
        Some(b) if b.is_finite() && b > 0.0 => b,
        Some(b) => return Err(EvalError::Config(format!("bin_s must be > 0, got {b}"))),
        None => {
            let rates: BTreeSet<u64> = pairs.iter().map(|p| p.positive().frame_rate_hz().to_bits()).collect();
            if rates.len() > 1 {
                return Err(EvalError::Config("pairs differ in frame rate; set an explicit bin width".into()));
            }
            let rate = pairs.first().map(|p| p.positive().frame_rate_hz()).ok_or(EvalError::NoOverlap)?;
            1.0 / rate
        }
    };
    let lo = (-config.before_s / bin_s + BIN_EPS).floor() as i64;
    let hi = (config.after_s / bin_s - BIN_EPS).ceil() as i64;
    let suffix = types.map(|t| format!(":{}", crate::benchmark::type_set_label(t))).unwrap_or_default();

    let per_pair: Vec<[BTreeMap<i64, f64>; 2]> = pairs
        .par_iter()
        .map(|p| {
            let sel = |t: &TokenTrace| match types {
                Some(ty) => t.select_channels(ty),
                None => Ok(t.clone()),
            };
            let pos = trace_bins(&sel(p.positive())?, bin_s, lo, hi)?;
            let neg = trace_bins(&sel(p.negative())?, bin_s, lo, hi)?;
            Ok::<_, EvalError>([pos, neg])
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (side, name) in [(1, "negative"), (0, "positive")] {
        let mut bins: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
        for pp in &per_pair {
            for (b, v) in &pp[side] {
                bins.entry(*b).or_default().push(*v);
            }
        }
        for (b, mut vs) in bins {
            // fixed summation order makes the result independent of pair order
            vs.sort_by(f64::total_cmp);
            let n = vs.len();
            let mean = vs.iter().sum::<f64>() / n as f64;
            let stderr = if n < 2 {
                0.0
            } else {
                let var = vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            };
            rows.push(CurveRow {
                time_s: b as f64 * bin_s,
                series: format!("{name}{suffix}"),
                mean_nll: mean,
                stderr,
                n,
            });
        }
    }
    if rows.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    Ok(AlignedCurve { bin_s, rows })
}
