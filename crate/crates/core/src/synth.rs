//! Seeded synthetic fixtures: pulse benchmarks and random embeddings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::trace::{
    write_embeddings, write_traces, BenchmarkManifest, ChannelStream, ContrastivePair, EmbeddingRecord, PairEntry,
    SegmentRole, TokenTrace, TraceRef,
};

/// Pairs whose negative carries an NLL spike right after the prompt.
///
/// Every channel is `base + AR(1) noise`, clamped at zero. Positive and
/// negative share the prompt segment and continue it independently; the
/// negative adds `spike_heights[i]` to channel `i` for `spike_s` seconds
/// from the prompt boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseConfig {
    pub n_pairs: usize,
    pub tasks: Vec<String>,
    pub frame_rate_hz: f64,
    pub duration_s: f64,
    pub prompt_s: f64,
    pub spike_s: f64,
    pub base_nll: f64,
    /// Marginal standard deviation of the noise.
    pub noise_sd: f64,
    /// Lag-one autocorrelation of the noise; 0 gives i.i.d. frames.
    pub ar_rho: f64,
    /// One channel per token type, with its spike height.
    pub token_types: Vec<String>,
    pub spike_heights: Vec<f64>,
    /// Also emit response-only NLL (the conditional stream without the spike).
    pub with_unconditional: bool,
    pub seed: u64,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            n_pairs: 200,
            tasks: vec!["pulse".into()],
            frame_rate_hz: 12.5,
            duration_s: 10.0,
            prompt_s: 4.0,
            spike_s: 0.4,
            base_nll: 3.0,
            noise_sd: 0.5,
            ar_rho: 0.9,
            token_types: vec!["0".into()],
            spike_heights: vec![2.0],
            with_unconditional: true,
            seed: 0,
        }
    }
}

impl PulseConfig {
    pub fn frames(&self) -> (usize, usize, usize) {
        let t = (self.duration_s * self.frame_rate_hz).round() as usize;
        let tp = (self.prompt_s * self.frame_rate_hz).round() as usize;
        let k = (self.spike_s * self.frame_rate_hz).round() as usize;
        (t, tp, k)
    }

    pub fn validate(&self) -> Result<()> {
        let (t, tp, _) = self.frames();
        if self.n_pairs == 0 || self.tasks.is_empty() {
            return Err(EvalError::Config("pulse fixture needs pairs and tasks".into()));
        }
        if tp >= t {
            return Err(EvalError::Config(format!("prompt ({tp} frames) must end before the sequence ({t} frames)")));
        }
        if self.token_types.is_empty() || self.token_types.len() != self.spike_heights.len() {
            return Err(EvalError::Config(
                "token_types and spike_heights must be non-empty and the same length".into(),
            ));
        }
        if !(self.noise_sd >= 0.0 && (0.0..1.0).contains(&self.ar_rho) && self.frame_rate_hz > 0.0) {
            return Err(EvalError::Config("noise_sd >= 0, 0 <= ar_rho < 1 and frame_rate_hz > 0 required".into()));
        }
        Ok(())
    }
}

struct Ar1 {
    rho: f64,
    innovation: Normal<f64>,
}

impl Ar1 {
    fn new(sd: f64, rho: f64) -> Self {
        let innovation = Normal::new(0.0, sd * (1.0 - rho * rho).sqrt()).expect("sd is finite and non-negative");
        Self { rho, innovation }
    }

    fn extend(&self, out: &mut Vec<f64>, mut x: f64, len: usize, rng: &mut ChaCha8Rng) {
        for _ in 0..len {
            x = self.rho * x + self.innovation.sample(rng);
            out.push(x);
        }
    }
}

/// Build the pulse fixture. Pair `i` draws from stream `i` of the seeded
/// generator, so any pair can be regenerated alone.
pub fn pulse_pairs(cfg: &PulseConfig) -> Result<Vec<ContrastivePair>> {
    cfg.validate()?;
    let (t, tp, k) = cfg.frames();
    let ar = Ar1::new(cfg.noise_sd, cfg.ar_rho);
    (0..cfg.n_pairs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for (ty, h) in cfg.token_types.iter().zip(&cfg.spike_heights) {
                let z: f64 = StandardNormal.sample(&mut rng);
                let x0 = cfg.noise_sd * z;
                let mut prompt = vec![x0];
                ar.extend(&mut prompt, x0, tp - 1, &mut rng);
                let last = *prompt.last().expect("prompt has frames");
                let mut p = prompt.clone();
                ar.extend(&mut p, last, t - tp, &mut rng);
                let mut n = prompt;
                ar.extend(&mut n, last, t - tp, &mut rng);
                let level = |x: &f64| (cfg.base_nll + x).max(0.0);
                let p: Vec<f64> = p.iter().map(level).collect();
                let n_plain: Vec<f64> = n.iter().map(level).collect();
                let mut n_spiked = n_plain.clone();
                for v in n_spiked.iter_mut().skip(tp).take(k) {
                    *v += h;
                }
                let name = format!("ch{ty}");
                let mut cp = ChannelStream::new(&name, ty, p.clone());
                let mut cn = ChannelStream::new(&name, ty, n_spiked);
                if cfg.with_unconditional {
                    let ro = |xs: &[f64]| (0..t).map(|j| (j >= tp).then(|| xs[j])).collect::<Vec<_>>();
                    cp = cp.with_response_only(ro(&p));
                    cn = cn.with_response_only(ro(&n_plain));
                }
                pos.push(cp);
                neg.push(cn);
            }
            let task = &cfg.tasks[i % cfg.tasks.len()];
            let id = format!("pair{i:05}");
            let mut meta = BTreeMap::new();
            meta.insert("fixture".to_string(), "pulse".to_string());
            let pt =
                TokenTrace::new(format!("{id}-pos"), cfg.frame_rate_hz, Some(tp), pos)?.with_metadata(meta.clone());
            let nt = TokenTrace::new(format!("{id}-neg"), cfg.frame_rate_hz, Some(tp), neg)?.with_metadata(meta);
            ContrastivePair::new(id, task, pt, nt, None, true)
        })
        .collect()
}

/// Write the pulse fixture as `traces.jsonl` plus `manifest.json` in `dir`.
pub fn write_pulse_benchmark(dir: impl AsRef<Path>, cfg: &PulseConfig) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let pairs = pulse_pairs(cfg)?;
    let traces: Vec<&TokenTrace> = pairs.iter().flat_map(|p| [p.positive(), p.negative()]).collect();
    write_traces(dir.join("traces.jsonl"), traces)?;
    let manifest = BenchmarkManifest {
        benchmark_name: "pulse".into(),
        model: Some("synthetic".into()),
        tasks: cfg.tasks.clone(),
        token_types: cfg.token_types.clone(),
        pairs: pairs
            .iter()
            .map(|p| PairEntry {
                pair_id: p.pair_id().to_owned(),
                task: p.task().to_owned(),
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
    manifest.save(&path)?;
    Ok(path)
}

/// Gaussian random vectors for every role of every pair under each model.
pub fn random_embeddings(pair_ids: &[String], models: &[String], dim: usize, seed: u64) -> Vec<EmbeddingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roles = [SegmentRole::Prompt, SegmentRole::Positive, SegmentRole::Negative, SegmentRole::Generation];
    let mut out = Vec::with_capacity(pair_ids.len() * models.len() * roles.len());
    for m in models {
        for id in pair_ids {
            for role in roles {
                out.push(EmbeddingRecord {
                    segment_id: id.clone(),
                    segment_role: role,
                    embed_model: m.clone(),
                    vector: (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
                });
            }
        }
    }
    out
}

pub fn write_random_embeddings(
    path: impl AsRef<Path>,
    pair_ids: &[String],
    models: &[String],
    dim: usize,
    seed: u64,
) -> Result<()> {
    write_embeddings(path, &random_embeddings(pair_ids, models, dim, seed))
}
