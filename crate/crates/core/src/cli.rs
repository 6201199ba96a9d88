//! Command-line front end.
//!
//! Settings resolve as command line, then `SLM_EVAL_*` environment
//! variables, then the TOML file given by `--config`, then defaults. Every
//! command writes into a run directory and never overwrites an existing file.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 partial
//! failure (some pairs skipped, see `failures.json`).

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::attribution::{self, AdvantageWeighting, CoalitionTable, DEFAULT_NULL_VALUE};
use crate::benchmark::{self, BenchmarkOptions, FailurePolicy, ScoreRow, DEFAULT_BOOTSTRAP_ITERATIONS};
use crate::error::{EvalError, PairFailure};
use crate::estimators::{EstimatorConfig, Method, Scope, DEFAULT_WINDOW_SECONDS};
use crate::judge::{self, JudgeItem, JudgeRegistry};
use crate::losscurve::{self, CurveConfig};
use crate::stats::{self, Pairing, ScoreColumn, SdKind};
use crate::synth::{self, PulseConfig};
use crate::trace::{load_embeddings, BenchmarkManifest, ContrastivePair, EmbeddingStore, TraceStore};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

const METHODS: [&str; 5] = ["global", "localized", "windowed", "normalized_global", "normalized_localized"];

#[derive(Debug, Parser)]
#[command(name = "slm-eval", version, about = "Evaluate spoken language models from token-level NLL traces")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by all commands. Each can also come from the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with default settings
    #[arg(long, global = true, env = "SLM_EVAL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Run directory for outputs
    #[arg(long, global = true, env = "SLM_EVAL_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Seed for bootstrap resampling and synthetic fixtures
    #[arg(long, global = true, env = "SLM_EVAL_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "SLM_EVAL_JOBS")]
    pub jobs: Option<usize>,
    /// What to do with pairs that fail to load or score
    #[arg(long, global = true, env = "SLM_EVAL_FAILURE_POLICY",
          value_parser = PossibleValuesParser::new(["skip_and_report", "fail_fast"]).map(|s| s.parse::<FailurePolicy>().unwrap()))]
    pub failure_policy: Option<FailurePolicy>,
    /// Bootstrap resamples per task
    #[arg(long, global = true, env = "SLM_EVAL_BOOTSTRAP_ITERATIONS")]
    pub bootstrap_iterations: Option<usize>,
    /// Likelihood estimator(s), comma separated
    #[arg(long = "method", global = true, env = "SLM_EVAL_METHOD", value_delimiter = ',',
          value_parser = PossibleValuesParser::new(METHODS).map(|s| s.parse::<Method>().unwrap()))]
    pub methods: Option<Vec<Method>>,
    /// Localized / windowed window length in seconds
    #[arg(long, global = true, env = "SLM_EVAL_WINDOW_SECONDS")]
    pub window_seconds: Option<f64>,
    /// Frames the estimator may use (default depends on the method)
    #[arg(long, global = true, env = "SLM_EVAL_SCOPE",
          value_parser = PossibleValuesParser::new(["response_only", "full_sequence"]).map(|s| s.parse::<Scope>().unwrap()))]
    pub scope: Option<Scope>,
    /// Token types to keep, comma separated (default: all channels)
    #[arg(long, global = true, env = "SLM_EVAL_TOKEN_TYPES", value_delimiter = ',')]
    pub token_types: Option<Vec<String>>,
    /// Correlation pairing(s), comma separated
    #[arg(long, global = true, env = "SLM_EVAL_PAIRING", value_delimiter = ',',
          value_parser = PossibleValuesParser::new(["per_model_avg", "per_model_task"]).map(|s| s.parse::<Pairing>().unwrap()))]
    pub pairing: Option<Vec<Pairing>>,
    /// Standard deviation convention for MOS cells
    #[arg(long, global = true, env = "SLM_EVAL_SD",
          value_parser = PossibleValuesParser::new(["sample", "population"]).map(|s| if s == "sample" { SdKind::Sample } else { SdKind::Population }))]
    pub sd: Option<SdKind>,
    /// Value of the empty coalition
    #[arg(long, global = true, env = "SLM_EVAL_NULL_VALUE")]
    pub null_value: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score contrastive pairs with likelihood estimators
    Likelihood(LikelihoodArgs),
    /// Select per-task embedding judges on a dev set
    JudgeSelect(JudgeSelectArgs),
    /// Score continuations with a judge registry
    JudgeScore(JudgeScoreArgs),
    /// Shapley values from a coalition table or from traces
    Shapley(ShapleyArgs),
    /// Per-token-type decomposition of the NLL advantage
    Advantage(AdvantageArgs),
    /// Transition-aligned mean NLL curves
    Losscurve(LosscurveArgs),
    /// Aggregate MOS ratings and rank models
    Mos(MosArgs),
    /// Correlate two score matrix columns
    Correlate(CorrelateArgs),
    /// Generate seeded synthetic fixtures
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct LikelihoodArgs {
    /// Benchmark manifest
    #[arg(long, env = "SLM_EVAL_MANIFEST")]
    pub manifest: PathBuf,
    /// Model name for the score matrix (default: the manifest's)
    #[arg(long, env = "SLM_EVAL_MODEL")]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct JudgeSelectArgs {
    /// Dev-set manifest (pairs and human toplines)
    #[arg(long, env = "SLM_EVAL_MANIFEST")]
    pub manifest: PathBuf,
    /// Embedding files
    #[arg(long, env = "SLM_EVAL_EMBEDDINGS", value_delimiter = ',', required = true)]
    pub embeddings: Vec<PathBuf>,
    /// Candidate embed models (default: every model in the files)
    #[arg(long, env = "SLM_EVAL_CANDIDATES", value_delimiter = ',')]
    pub candidates: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct JudgeScoreArgs {
    /// Manifest listing the continuation pairs
    #[arg(long, env = "SLM_EVAL_MANIFEST")]
    pub manifest: PathBuf,
    /// Embedding files
    #[arg(long, env = "SLM_EVAL_EMBEDDINGS", value_delimiter = ',', required = true)]
    pub embeddings: Vec<PathBuf>,
    /// Registry written by judge-select
    #[arg(long, env = "SLM_EVAL_REGISTRY")]
    pub registry: PathBuf,
    /// Score with judges below the human topline
    #[arg(long, env = "SLM_EVAL_ALLOW_UNQUALIFIED")]
    pub allow_unqualified: bool,
    /// Model name for the score matrix (default: the manifest's)
    #[arg(long, env = "SLM_EVAL_MODEL")]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct ShapleyArgs {
    /// Pre-filled coalition table
    #[arg(long, env = "SLM_EVAL_TABLE", conflicts_with = "manifest", required_unless_present = "manifest")]
    pub table: Option<PathBuf>,
    /// Manifest to evaluate every coalition on
    #[arg(long, env = "SLM_EVAL_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Players (token types); default: the manifest's token types
    #[arg(long, env = "SLM_EVAL_PLAYERS", value_delimiter = ',')]
    pub players: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct AdvantageArgs {
    #[arg(long, env = "SLM_EVAL_MANIFEST")]
    pub manifest: PathBuf,
    /// Token types to decompose over (default: the manifest's)
    #[arg(long, env = "SLM_EVAL_PLAYERS", value_delimiter = ',')]
    pub players: Option<Vec<String>>,
    /// Report per-type mean gaps instead of frame-count-weighted shares
    #[arg(long, env = "SLM_EVAL_PER_TYPE_MEAN")]
    pub per_type_mean: bool,
}

#[derive(Debug, Args)]
pub struct LosscurveArgs {
    #[arg(long, env = "SLM_EVAL_MANIFEST")]
    pub manifest: PathBuf,
    /// Seconds before the transition
    #[arg(long, env = "SLM_EVAL_BEFORE_S", default_value_t = 2.0)]
    pub before_s: f64,
    /// Seconds after the transition
    #[arg(long, env = "SLM_EVAL_AFTER_S", default_value_t = 3.0)]
    pub after_s: f64,
    /// Bin width in seconds (default: one frame)
    #[arg(long, env = "SLM_EVAL_BIN_S")]
    pub bin_s: Option<f64>,
    /// Also emit one series per token type
    #[arg(long, env = "SLM_EVAL_PER_TYPE")]
    pub per_type: bool,
}

#[derive(Debug, Args)]
pub struct MosArgs {
    /// Ratings: sample_id,model,task,annotator_id,rating
    #[arg(long, env = "SLM_EVAL_RATINGS")]
    pub ratings: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Score matrix holding the evaluated column
    #[arg(long, env = "SLM_EVAL_SCORES")]
    pub scores: PathBuf,
    /// Method of the evaluated column
    #[arg(long, env = "SLM_EVAL_SCORES_METHOD")]
    pub scores_method: String,
    /// Score matrix holding the reference column
    #[arg(long, env = "SLM_EVAL_GOLDEN")]
    pub golden: PathBuf,
    /// Method of the reference column
    #[arg(long, env = "SLM_EVAL_GOLDEN_METHOD", default_value = "mos")]
    pub golden_method: String,
    /// Restrict to these models, comma separated
    #[arg(long, env = "SLM_EVAL_MODELS", value_delimiter = ',')]
    pub models: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub kind: SynthKind,
}

#[derive(Debug, Subcommand)]
pub enum SynthKind {
    /// Pulse benchmark: manifest plus traces
    Pulse {
        #[arg(long, env = "SLM_EVAL_N_PAIRS", default_value_t = 200)]
        n_pairs: usize,
        /// Lag-one noise autocorrelation
        #[arg(long, env = "SLM_EVAL_AR_RHO", default_value_t = 0.9)]
        ar_rho: f64,
        #[arg(long, env = "SLM_EVAL_NOISE_SD", default_value_t = 0.5)]
        noise_sd: f64,
        /// Spike height per token type, comma separated
        #[arg(long, env = "SLM_EVAL_SPIKE_HEIGHTS", value_delimiter = ',', default_value = "2.0")]
        spike_heights: Vec<f64>,
        /// Task names; pairs are dealt round robin
        #[arg(long, env = "SLM_EVAL_TASKS", value_delimiter = ',', default_value = "pulse")]
        tasks: Vec<String>,
    },
    /// Random Gaussian embeddings for every pair of a manifest
    Embeddings {
        #[arg(long, env = "SLM_EVAL_MANIFEST")]
        manifest: PathBuf,
        #[arg(long, env = "SLM_EVAL_MODELS", value_delimiter = ',', default_value = "random")]
        models: Vec<String>,
        #[arg(long, env = "SLM_EVAL_DIM", default_value_t = 256)]
        dim: usize,
    },
}

/// Fully resolved settings, recorded in every run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub failure_policy: FailurePolicy,
    pub bootstrap_iterations: usize,
    pub methods: Vec<Method>,
    pub window_seconds: f64,
    pub scope: Option<Scope>,
    pub token_types: Option<Vec<String>>,
    pub pairing: Vec<Pairing>,
    pub sd: SdKind,
    pub null_value: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("slm-eval-run"),
            seed: 0,
            jobs: None,
            failure_policy: FailurePolicy::SkipAndReport,
            bootstrap_iterations: DEFAULT_BOOTSTRAP_ITERATIONS,
            methods: vec![Method::Global],
            window_seconds: DEFAULT_WINDOW_SECONDS,
            scope: None,
            token_types: None,
            pairing: Pairing::ALL.to_vec(),
            sd: SdKind::Sample,
            null_value: DEFAULT_NULL_VALUE,
        }
    }
}

/// Config file contents: any subset of the run settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub failure_policy: Option<FailurePolicy>,
    pub bootstrap_iterations: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub window_seconds: Option<f64>,
    pub scope: Option<Scope>,
    pub token_types: Option<Vec<String>>,
    pub pairing: Option<Vec<Pairing>>,
    pub sd: Option<SdKind>,
    pub null_value: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))
    }
}

impl From<&RunConfig> for FileConfig {
    fn from(c: &RunConfig) -> Self {
        FileConfig {
            out_dir: Some(c.out_dir.clone()),
            seed: Some(c.seed),
            jobs: c.jobs,
            failure_policy: Some(c.failure_policy),
            bootstrap_iterations: Some(c.bootstrap_iterations),
            methods: Some(c.methods.clone()),
            window_seconds: Some(c.window_seconds),
            scope: c.scope,
            token_types: c.token_types.clone(),
            pairing: Some(c.pairing.clone()),
            sd: Some(c.sd),
            null_value: Some(c.null_value),
        }
    }
}

impl RunConfig {
    /// Layer command-line/environment values over the file over defaults.
    pub fn resolve(args: &CommonArgs, file: &FileConfig) -> Self {
        let d = RunConfig::default();
        RunConfig {
            out_dir: args.out_dir.clone().or_else(|| file.out_dir.clone()).unwrap_or(d.out_dir),
            seed: args.seed.or(file.seed).unwrap_or(d.seed),
            jobs: args.jobs.or(file.jobs),
            failure_policy: args.failure_policy.or(file.failure_policy).unwrap_or(d.failure_policy),
            bootstrap_iterations: args
                .bootstrap_iterations
                .or(file.bootstrap_iterations)
                .unwrap_or(d.bootstrap_iterations),
            methods: args.methods.clone().or_else(|| file.methods.clone()).unwrap_or(d.methods),
            window_seconds: args.window_seconds.or(file.window_seconds).unwrap_or(d.window_seconds),
            scope: args.scope.or(file.scope),
            token_types: args.token_types.clone().or_else(|| file.token_types.clone()),
            pairing: args.pairing.clone().or_else(|| file.pairing.clone()).unwrap_or(d.pairing),
            sd: args.sd.or(file.sd).unwrap_or(d.sd),
            null_value: args.null_value.or(file.null_value).unwrap_or(d.null_value),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&FileConfig::from(self)).expect("config serialization cannot fail")
    }

    pub fn estimator(&self, method: Method) -> Result<EstimatorConfig, EvalError> {
        let mut c = EstimatorConfig::new(method).with_window_seconds(self.window_seconds);
        if let Some(s) = self.scope {
            c = c.with_scope(s);
        }
        c.validate()?;
        Ok(c)
    }

    fn single_method(&self) -> Result<Method, EvalError> {
        match self.methods.as_slice() {
            [m] => Ok(*m),
            ms => Err(EvalError::Config(format!("this command takes exactly one method, got {}", ms.len()))),
        }
    }

    fn types(&self) -> Option<BTreeSet<String>> {
        self.token_types.as_ref().map(|t| t.iter().cloned().collect())
    }

    fn options(&self) -> BenchmarkOptions {
        BenchmarkOptions {
            bootstrap_iterations: self.bootstrap_iterations,
            seed: self.seed,
            failure_policy: self.failure_policy,
        }
    }
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Data(EvalError),
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        if e.is_data_error() && !matches!(e, EvalError::UnknownTokenType(_)) {
            CliError::Data(e)
        } else {
            CliError::Config(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} not found", path.display())))
    }
}

/// Run directory that only ever creates new files.
struct RunDir {
    root: PathBuf,
    outputs: Vec<String>,
}

impl RunDir {
    fn open(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), outputs: Vec::new() })
    }

    fn create(&mut self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.root.join(name);
        let f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            CliError::Config(format!("refusing to overwrite {} ({e}); use a fresh --out-dir", path.display()))
        })?;
        self.outputs.push(name.to_owned());
        Ok(BufWriter::new(f))
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let mut w = self.create(name)?;
        w.write_all(contents.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| CliError::Data(EvalError::io(self.root.join(name), e)))
    }

    fn jsonl<T: Serialize>(&mut self, name: &str, items: impl IntoIterator<Item = T>) -> CliResult<()> {
        let mut s = String::new();
        for it in items {
            s.push_str(&serde_json::to_string(&it).expect("record serialization cannot fail"));
            s.push('\n');
        }
        self.write(name, &s)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.write(name, &(serde_json::to_string_pretty(value).expect("serialization cannot fail") + "\n"))
    }

    fn scores(&mut self, name: &str, rows: &[ScoreRow]) -> CliResult<()> {
        let w = self.create(name)?;
        benchmark::write_score_matrix(w, rows)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    version: &'a str,
    started_at: String,
    config: &'a RunConfig,
    inputs: Vec<String>,
    outputs: Vec<String>,
    status: &'a str,
    failures: usize,
}

enum Status {
    Ok,
    Partial(Vec<PairFailure>),
}

fn load_manifest(path: &Path) -> CliResult<BenchmarkManifest> {
    require_file(path, "manifest")?;
    Ok(BenchmarkManifest::load(path)?)
}

fn load_store(paths: &[PathBuf]) -> CliResult<EmbeddingStore> {
    let mut store = EmbeddingStore::new();
    for p in paths {
        require_file(p, "embedding file")?;
        for r in load_embeddings(p)? {
            store.insert(r);
        }
    }
    Ok(store)
}

fn items(manifest: &BenchmarkManifest) -> Vec<JudgeItem> {
    manifest.pairs.iter().map(|p| JudgeItem::new(&p.pair_id, &p.task)).collect()
}

fn load_pairs(manifest: &BenchmarkManifest, cfg: &RunConfig) -> CliResult<(Vec<ContrastivePair>, Vec<PairFailure>)> {
    let store = TraceStore::new(manifest);
    store.preload();
    let mut pairs = Vec::new();
    let mut failures = Vec::new();
    for e in &manifest.pairs {
        match store.load_pair(e) {
            Ok(p) => pairs.push(p),
            Err(err) if cfg.failure_policy == FailurePolicy::FailFast => return Err(err.into()),
            Err(err) => failures.push(PairFailure { pair_id: e.pair_id.clone(), reason: err.to_string() }),
        }
    }
    Ok((pairs, failures))
}

fn partial(out: &mut RunDir, failures: Vec<PairFailure>) -> CliResult<Status> {
    if failures.is_empty() {
        return Ok(Status::Ok);
    }
    out.json("failures.json", &failures)?;
    Ok(Status::Partial(failures))
}

fn cmd_likelihood(
    a: &LikelihoodArgs,
    cfg: &RunConfig,
    out: &mut RunDir,
    inputs: &mut Vec<String>,
) -> CliResult<Status> {
    let manifest = load_manifest(&a.manifest)?;
    inputs.push(a.manifest.display().to_string());
    let types = cfg.types();
    let label = types.as_ref().map(benchmark::type_set_label).unwrap_or_else(|| manifest.token_types.join("+"));
    let model = a.model.clone().unwrap_or_else(|| manifest.model_name().to_owned());
    let estimators: Vec<EstimatorConfig> = cfg.methods.iter().map(|m| cfg.estimator(*m)).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut comparisons = Vec::new();
    let mut failures: Vec<PairFailure> = Vec::new();
    for est in &estimators {
        let report = benchmark::run_benchmark(&manifest, est, types.as_ref(), &cfg.options())?;
        rows.extend(report.accuracies.iter().map(|t| ScoreRow::from_task(&model, &label, t)));
        comparisons.extend(report.comparisons);
        for f in report.failures {
            if !failures.iter().any(|g| g.pair_id == f.pair_id) {
                failures.push(f);
            }
        }
    }
    out.scores("scores.csv", &rows)?;
    out.jsonl("comparisons.jsonl", &comparisons)?;
    out.jsonl("utterance_scores.jsonl", comparisons.iter().flat_map(|c| c.score_records()))?;
    partial(out, failures)
}

fn cmd_judge_select(a: &JudgeSelectArgs, out: &mut RunDir, inputs: &mut Vec<String>) -> CliResult<Status> {
    let manifest = load_manifest(&a.manifest)?;
    let store = load_store(&a.embeddings)?;
    inputs.push(a.manifest.display().to_string());
    inputs.extend(a.embeddings.iter().map(|p| p.display().to_string()));
    let candidates = a.candidates.clone().unwrap_or_else(|| store.models());
    let registry = judge::select_judges(&items(&manifest), &store, &candidates, &manifest.human_topline)?;
    out.write("registry.json", &(registry.to_json() + "\n"))?;
    for e in &registry.entries {
        println!(
            "{:<24} {:<32} dev {:>6.1}  topline {:>6}  {}",
            e.task,
            e.embed_model,
            e.dev_accuracy,
            e.human_topline.map_or("-".to_string(), |t| format!("{t:.1}")),
            if e.qualified { "qualified" } else { "unqualified" }
        );
    }
    Ok(Status::Ok)
}

fn cmd_judge_score(
    a: &JudgeScoreArgs,
    cfg: &RunConfig,
    out: &mut RunDir,
    inputs: &mut Vec<String>,
) -> CliResult<Status> {
    let manifest = load_manifest(&a.manifest)?;
    require_file(&a.registry, "registry")?;
    let registry = JudgeRegistry::load(&a.registry)?;
    let store = load_store(&a.embeddings)?;
    inputs.push(a.manifest.display().to_string());
    inputs.push(a.registry.display().to_string());
    inputs.extend(a.embeddings.iter().map(|p| p.display().to_string()));
    let scores = judge::score_continuations(&registry, &items(&manifest), &store, a.allow_unqualified, &cfg.options())?;
    let model = a.model.clone().unwrap_or_else(|| manifest.model_name().to_owned());
    let rows: Vec<ScoreRow> = scores.accuracies.iter().map(|t| ScoreRow::from_task(&model, "", t)).collect();
    out.jsonl("verdicts.jsonl", &scores.verdicts)?;
    out.scores("scores.csv", &rows)?;
    Ok(Status::Ok)
}

fn cmd_shapley(a: &ShapleyArgs, cfg: &RunConfig, out: &mut RunDir, inputs: &mut Vec<String>) -> CliResult<Status> {
    let (table, failures) = match (&a.table, &a.manifest) {
        (Some(t), _) => {
            require_file(t, "coalition table")?;
            inputs.push(t.display().to_string());
            (CoalitionTable::load(t)?, Vec::new())
        }
        (None, Some(m)) => {
            let manifest = load_manifest(m)?;
            inputs.push(m.display().to_string());
            let players = a.players.clone().unwrap_or_else(|| manifest.token_types.clone());
            let est = cfg.estimator(cfg.single_method()?)?;
            let (table, failures) =
                attribution::evaluate_coalitions(&manifest, &est, &players, cfg.null_value, &cfg.options())?;
            out.write("coalitions.json", &(table.to_json() + "\n"))?;
            (table, failures)
        }
        (None, None) => return Err(CliError::Config("give --table or --manifest".into())),
    };
    let result = attribution::shapley(&table)?;
    out.write("shapley.csv", &result.to_csv())?;
    print!("{}", result.render());
    partial(out, failures)
}

fn cmd_advantage(a: &AdvantageArgs, cfg: &RunConfig, out: &mut RunDir, inputs: &mut Vec<String>) -> CliResult<Status> {
    let manifest = load_manifest(&a.manifest)?;
    inputs.push(a.manifest.display().to_string());
    let players = a.players.clone().unwrap_or_else(|| manifest.token_types.clone());
    let weighting = if a.per_type_mean { AdvantageWeighting::PerTypeMean } else { AdvantageWeighting::FrameCount };
    let est = cfg.estimator(cfg.single_method()?)?;
    let (profile, failures) =
        attribution::advantage_decomposition(&manifest, &est, &players, weighting, &cfg.options())?;
    out.json("advantage.json", &profile)?;
    partial(out, failures)
}

fn cmd_losscurve(a: &LosscurveArgs, cfg: &RunConfig, out: &mut RunDir, inputs: &mut Vec<String>) -> CliResult<Status> {
    let manifest = load_manifest(&a.manifest)?;
    inputs.push(a.manifest.display().to_string());
    let (pairs, failures) = load_pairs(&manifest, cfg)?;
    let cc = CurveConfig { before_s: a.before_s, after_s: a.after_s, bin_s: a.bin_s };
    let mut rows = losscurve::align_and_average(&pairs, &cc, cfg.types().as_ref())?.rows;
    if a.per_type {
        for ty in &manifest.token_types {
            let one = BTreeSet::from([ty.clone()]);
            rows.extend(losscurve::align_and_average(&pairs, &cc, Some(&one))?.rows);
        }
    }
    let curve = losscurve::AlignedCurve { bin_s: cc.bin_s.unwrap_or(f64::NAN), rows };
    let w = out.create("curve.csv")?;
    curve.write_csv(w)?;
    partial(out, failures)
}

fn cmd_mos(a: &MosArgs, cfg: &RunConfig, out: &mut RunDir, inputs: &mut Vec<String>) -> CliResult<Status> {
    require_file(&a.ratings, "ratings file")?;
    inputs.push(a.ratings.display().to_string());
    let f = File::open(&a.ratings).map_err(|e| EvalError::io(&a.ratings, e))?;
    let records = stats::read_mos(f)?;
    let summary = stats::aggregate_mos(&records, cfg.sd)?;
    out.json("mos_summary.json", &summary)?;
    out.scores("mos_scores.csv", &summary.score_rows())?;
    for m in &summary.models {
        println!("{:>2}  {:<24} {:.2}", m.rank, m.model, m.average);
    }
    Ok(Status::Ok)
}

fn cmd_correlate(a: &CorrelateArgs, cfg: &RunConfig, out: &mut RunDir, inputs: &mut Vec<String>) -> CliResult<Status> {
    let read = |p: &Path| -> CliResult<Vec<ScoreRow>> {
        require_file(p, "score matrix")?;
        let f = File::open(p).map_err(|e| EvalError::io(p, e))?;
        Ok(benchmark::read_score_matrix(f)?)
    };
    let sa = read(&a.scores)?;
    let sb = read(&a.golden)?;
    inputs.push(a.scores.display().to_string());
    inputs.push(a.golden.display().to_string());
    let types = cfg.token_types.as_ref().map(|t| t.join("+"));
    let mut ca = ScoreColumn::from_rows(&sa, &a.scores_method, types.as_deref())?;
    let mut cb = ScoreColumn::from_rows(&sb, &a.golden_method, None)?;
    if let Some(models) = &a.models {
        let keep: BTreeSet<String> = models.iter().cloned().collect();
        ca = ca.filter_models(&keep);
        cb = cb.filter_models(&keep);
    }
    let mut reports = Vec::new();
    for p in &cfg.pairing {
        let r = stats::correlate_scores(&ca, &cb, *p)?;
        println!("{:<16} pearson {:+.3}  spearman {:+.3}  n {}", p.to_string(), r.pearson, r.spearman, r.n);
        let mut s = String::from("key,x,y\n");
        for pt in &r.points {
            s.push_str(&format!("{},{},{}\n", pt.key, pt.x, pt.y));
        }
        out.write(&format!("points_{p}.csv"), &s)?;
        reports.push(r);
    }
    out.json("correlation.json", &reports)?;
    Ok(Status::Ok)
}

fn cmd_synth(a: &SynthArgs, cfg: &RunConfig, out: &mut RunDir, inputs: &mut Vec<String>) -> CliResult<Status> {
    match &a.kind {
        SynthKind::Pulse { n_pairs, ar_rho, noise_sd, spike_heights, tasks } => {
            let types =
                cfg.token_types.clone().unwrap_or_else(|| (0..spike_heights.len()).map(|i| i.to_string()).collect());
            let pc = PulseConfig {
                n_pairs: *n_pairs,
                ar_rho: *ar_rho,
                noise_sd: *noise_sd,
                spike_heights: spike_heights.clone(),
                token_types: types,
                tasks: tasks.clone(),
                seed: cfg.seed,
                ..PulseConfig::default()
            };
            for name in ["traces.jsonl", "manifest.json"] {
                if out.root.join(name).exists() {
                    return Err(CliError::Config(format!("{} already exists in the run directory", name)));
                }
            }
            synth::write_pulse_benchmark(&out.root, &pc)?;
            out.outputs.extend(["traces.jsonl".to_string(), "manifest.json".to_string()]);
        }
        SynthKind::Embeddings { manifest, models, dim } => {
            let m = load_manifest(manifest)?;
            inputs.push(manifest.display().to_string());
            let ids: Vec<String> = m.pairs.iter().map(|p| p.pair_id.clone()).collect();
            let recs = synth::random_embeddings(&ids, models, *dim, cfg.seed);
            out.jsonl("embeddings.jsonl", &recs)?;
        }
    }
    Ok(Status::Ok)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Likelihood(_) => "likelihood",
        Command::JudgeSelect(_) => "judge-select",
        Command::JudgeScore(_) => "judge-score",
        Command::Shapley(_) => "shapley",
        Command::Advantage(_) => "advantage",
        Command::Losscurve(_) => "losscurve",
        Command::Mos(_) => "mos",
        Command::Correlate(_) => "correlate",
        Command::Synth(_) => "synth",
    }
}

fn execute(cli: &Cli, argv: Vec<String>) -> CliResult<Status> {
    let file = match &cli.common.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let cfg = RunConfig::resolve(&cli.common, &file);
    let mut out = RunDir::open(&cfg.out_dir)?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let mut inputs = Vec::new();
    let mut run = || -> CliResult<Status> {
        match &cli.command {
            Command::Likelihood(a) => cmd_likelihood(a, &cfg, &mut out, &mut inputs),
            Command::JudgeSelect(a) => cmd_judge_select(a, &mut out, &mut inputs),
            Command::JudgeScore(a) => cmd_judge_score(a, &cfg, &mut out, &mut inputs),
            Command::Shapley(a) => cmd_shapley(a, &cfg, &mut out, &mut inputs),
            Command::Advantage(a) => cmd_advantage(a, &cfg, &mut out, &mut inputs),
            Command::Losscurve(a) => cmd_losscurve(a, &cfg, &mut out, &mut inputs),
            Command::Mos(a) => cmd_mos(a, &cfg, &mut out, &mut inputs),
            Command::Correlate(a) => cmd_correlate(a, &cfg, &mut out, &mut inputs),
            Command::Synth(a) => cmd_synth(a, &cfg, &mut out, &mut inputs),
        }
    };
    let status = match cfg.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?
            .install(run),
        None => run(),
    }?;
    let (label, failures) = match &status {
        Status::Ok => ("ok", 0),
        Status::Partial(f) => ("partial", f.len()),
    };
    let manifest = RunManifest {
        command: command_name(&cli.command),
        argv,
        version: env!("CARGO_PKG_VERSION"),
        started_at,
        config: &cfg,
        inputs,
        outputs: out.outputs.clone(),
        status: label,
        failures,
    };
    let name = format!("run-{}.json", command_name(&cli.command));
    out.json(&name, &manifest)?;
    Ok(status)
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let argv = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, argv) {
        Ok(Status::Ok) => EXIT_OK,
        Ok(Status::Partial(f)) => {
            eprintln!("warning: {} pair(s) skipped; see failures.json", f.len());
            EXIT_PARTIAL
        }
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            EXIT_CONFIG
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}
