#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use slm_eval::trace::{
    write_traces, BenchmarkManifest, ChannelStream, ContrastivePair, PairEntry, TokenTrace, TraceRef,
};

pub const TYPES: [&str; 3] = ["a", "b", "c"];

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Shape shared by both sides of a random pair.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub len: usize,
    pub prompt_end: usize,
    pub channels: usize,
    pub frame_rate_hz: f64,
}

impl Shape {
    pub fn random(rng: &mut impl Rng) -> Self {
        let len = rng.gen_range(2..60);
        Shape {
            len,
            prompt_end: rng.gen_range(1..len),
            channels: rng.gen_range(1..=TYPES.len()),
            frame_rate_hz: [10.0, 12.5, 25.0][rng.gen_range(0..3)],
        }
    }
}

/// NLL values; coarse values make ties likely.
pub fn nll_value(rng: &mut impl Rng, coarse: bool) -> f64 {
    if coarse {
        rng.gen_range(0..8) as f64 * 0.5
    } else {
        rng.gen_range(0.0..8.0)
    }
}

/// Random trace with masked frames and response-only NLL. Each channel keeps
/// at least one valid frame in the response.
pub fn random_trace(rng: &mut impl Rng, id: &str, shape: Shape, mask_p: f64, coarse: bool) -> TokenTrace {
    let channels = (0..shape.channels)
        .map(|c| {
            let cond: Vec<f64> = (0..shape.len).map(|_| nll_value(rng, coarse)).collect();
            let mut mask: Vec<bool> = (0..shape.len).map(|_| !rng.gen_bool(mask_p)).collect();
            let keep = rng.gen_range(shape.prompt_end..shape.len);
            mask[keep] = true;
            let ro = (0..shape.len).map(|t| (t >= shape.prompt_end).then(|| nll_value(rng, coarse))).collect();
            ChannelStream::new(format!("ch{c}"), TYPES[c], cond).with_valid_mask(mask).with_response_only(ro)
        })
        .collect();
    TokenTrace::new(id, shape.frame_rate_hz, Some(shape.prompt_end), channels).unwrap()
}

pub fn random_pair(rng: &mut impl Rng, id: &str, task: &str, coarse: bool) -> ContrastivePair {
    let shape = Shape::random(rng);
    pair_with_shape(rng, id, task, coarse, shape)
}

pub fn pair_with_shape(rng: &mut impl Rng, id: &str, task: &str, coarse: bool, shape: Shape) -> ContrastivePair {
    let mask_p = rng.gen_range(0.0..0.5);
    let pos = random_trace(rng, &format!("{id}-pos"), shape, mask_p, coarse);
    let neg = if rng.gen_bool(0.1) {
        TokenTrace::new(format!("{id}-neg"), pos.frame_rate_hz(), pos.prompt_end_frame(), pos.channels().to_vec())
            .unwrap()
    } else {
        random_trace(rng, &format!("{id}-neg"), shape, mask_p, coarse)
    };
    ContrastivePair::new(id, task, pos, neg, None, true).unwrap()
}

/// Write `pairs` as a benchmark (traces plus manifest) under `dir`.
pub fn write_benchmark(dir: &Path, pairs: &[ContrastivePair], tasks: &[String]) -> PathBuf {
    let traces: Vec<&TokenTrace> = pairs.iter().flat_map(|p| [p.positive(), p.negative()]).collect();
    write_traces(dir.join("traces.jsonl"), traces).unwrap();
    let manifest = BenchmarkManifest {
        benchmark_name: "random".into(),
        model: Some("m".into()),
        tasks: tasks.to_vec(),
        token_types: TYPES.iter().map(|s| s.to_string()).collect(),
        pairs: pairs
            .iter()
            .map(|p| PairEntry {
                pair_id: p.pair_id().into(),
                task: p.task().into(),
                positive: TraceRef::parse(&format!("traces.jsonl#{}", p.positive().utterance_id())),
                negative: TraceRef::parse(&format!("traces.jsonl#{}", p.negative().utterance_id())),
                continuation: None,
                has_shared_prompt: true,
            })
            .collect(),
        human_topline: BTreeMap::new(),
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    manifest.save(&path).unwrap();
    path
}

/// Pearson by the one-pass textbook formula.
pub fn brute_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if vx.abs() < 1e-9 * n * sxx.max(1.0) || vy.abs() < 1e-9 * n * syy.max(1.0) {
        return None;
    }
    Some((n * sxy - sx * sy) / (vx.sqrt() * vy.sqrt()))
}

/// Average ranks by counting smaller and equal values.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let less = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Smallest `k` with `P(Binomial(n, p) <= k) >= q`.
pub fn binomial_quantile(n: u64, p: f64, q: f64) -> u64 {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    let ln_fact = |k: u64| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    let ln_n = ln_fact(n);
    let mut cdf = 0.0;
    for k in 0..=n {
        let ln_pmf = ln_n - ln_fact(k) - ln_fact(n - k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln();
        cdf += ln_pmf.exp();
        if cdf >= q - 1e-12 {
            return k;
        }
    }
    n
}
