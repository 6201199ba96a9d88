//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits non-zero on any failure that is not listed in `KNOWN_FAILURES`, and
//! also when a listed failure starts passing.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use slm_eval::attribution::{shapley, shapley_values, CoalitionTable};
use slm_eval::benchmark::{self, bootstrap_ci, read_score_matrix, BenchmarkOptions, Outcome};
use slm_eval::estimators::{self, EstimatorConfig, Method, Scope};
use slm_eval::judge::{self, JudgeItem};
use slm_eval::stats::{self, correlate_scores, Pairing, ScoreColumn, SdKind};
use slm_eval::synth::{self, PulseConfig};
use slm_eval::trace::{BenchmarkManifest, ChannelStream, EmbeddingRecord, EmbeddingStore, SegmentRole, TokenTrace};

use common::*;

type Outcome_ = Result<String, String>;

/// Shapley cells whose published value is inconsistent with the published
/// coalition accuracies (panel, player, column). See the decision ledger.
/// (panel, player, column) of one reproduction cell.
type Cell = (&'static str, &'static str, &'static str);

const KNOWN_FAILURES: &[(&str, &[Cell])] = &[(
    "shapley reproduction",
    &[("spirit_global_normalized", "P", "speaker"), ("spirit_global_normalized", "P", "room")],
)];

const SHAPLEY_TOL: f64 = 0.05 + 1e-9;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn shapley_reproduction() -> (Outcome_, Vec<(String, String, String)>) {
    let dir = fixtures().join("shapley");
    let published: BTreeMap<String, BTreeMap<String, Vec<f64>>> =
        serde_json::from_reader(File::open(dir.join("published_phi.json")).unwrap()).unwrap();
    let start = Instant::now();
    let mut cells = 0;
    let mut bad = Vec::new();
    let mut detail = Vec::new();
    for (panel, phis) in &published {
        let table = CoalitionTable::load(dir.join(format!("{panel}.json"))).unwrap();
        let r = shapley(&table).unwrap();
        for (i, player) in r.players.iter().enumerate() {
            let computed: Vec<f64> = r.per_task.iter().map(|t| t[i]).chain([r.average[i]]).collect();
            let columns = r.tasks.iter().cloned().chain(["avg".to_string()]);
            for ((col, c), p) in columns.zip(&computed).zip(&phis[player]) {
                cells += 1;
                if (c - p).abs() > SHAPLEY_TOL {
                    detail.push(format!("{panel} {player} {col}: {c:.3} vs {p}"));
                    bad.push((panel.clone(), player.clone(), col));
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let spirit = shapley(&CoalitionTable::load(dir.join("spirit_global_original.json")).unwrap()).unwrap();
    let avg: Vec<String> = spirit.average.iter().map(|v| format!("{v:+.1}")).collect();
    let off_cells = bad.len();
    if avg != ["+9.9", "+9.4", "-0.3"] {
        detail.push(format!("spirit global/original avg {avg:?}"));
        bad.push(("spirit_global_original".into(), "all".into(), "avg rounding".into()));
    }
    if elapsed >= 1.0 {
        detail.push(format!("took {elapsed:.3}s"));
        bad.push(("all".into(), "all".into(), "runtime".into()));
    }
    let res = ensure(bad.is_empty(), || {
        format!("{}/{} cells within 0.05, {elapsed:.3}s; off: {}", cells - off_cells, cells, detail.join("; "))
    });
    (res.map(|_| format!("{cells}/{cells} cells within 0.05, {elapsed:.3}s")), bad)
}

fn random_game(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..1usize << n).map(|_| rng.gen_range(0..=200) as f64 * 0.5).collect();
    v[0] = 50.0;
    v
}

fn shapley_axioms() -> Outcome_ {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst_eff = 0.0f64;
    for g in 0..1000 {
        let n = rng.gen_range(3..=6);
        let full = (1usize << n) - 1;
        let v = random_game(&mut rng, n);
        let phi = shapley_values(n, &v).unwrap();
        let eff = (phi.iter().sum::<f64>() - (v[full] - 50.0)).abs();
        worst_eff = worst_eff.max(eff);
        ensure(eff <= 1e-9, || format!("game {g}: efficiency off by {eff:e}"))?;

        // dummy: player d adds nothing to any coalition
        let d = rng.gen_range(0..n);
        let mut dv = v.clone();
        for m in 0..=full {
            if m & (1 << d) != 0 {
                dv[m] = dv[m & !(1 << d)];
            }
        }
        let dphi = shapley_values(n, &dv).unwrap();
        ensure(dphi[d] == 0.0, || format!("game {g}: dummy got {}", dphi[d]))?;

        // symmetry: v depends on i and j only through their count
        let (i, j) = (0, 1 + rng.gen_range(0..n - 1));
        let mut sv = v.clone();
        for m in 0..=full {
            let swapped = if (m >> i & 1) != (m >> j & 1) { m ^ (1 << i) ^ (1 << j) } else { m };
            if swapped < m {
                sv[m] = sv[swapped];
            }
        }
        let sphi = shapley_values(n, &sv).unwrap();
        ensure((sphi[i] - sphi[j]).abs() <= 1e-9, || {
            format!("game {g}: symmetric players {} vs {}", sphi[i], sphi[j])
        })?;

        // linearity
        let w = random_game(&mut rng, n);
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let lin: Vec<f64> = v.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
        let lphi = shapley_values(n, &lin).unwrap();
        let wphi = shapley_values(n, &w).unwrap();
        for k in 0..n {
            let expect = a * phi[k] + b * wphi[k];
            ensure((lphi[k] - expect).abs() <= 1e-9, || format!("game {g}: linearity {} vs {expect}", lphi[k]))?;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure(elapsed < 10.0, || format!("took {elapsed:.2}s"))?;
    Ok(format!("1000 games, max efficiency residual {worst_eff:.1e}, {elapsed:.2}s"))
}

fn estimator_reductions() -> Outcome_ {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let shape = Shape::random(&mut rng);
        let mask_p = rng.gen_range(0.0..0.5);
        let trace = random_trace(&mut rng, &format!("u{i}"), shape, mask_p, i % 2 == 0);
        let fr = shape.frame_rate_hz;

        let local = EstimatorConfig::new(Method::Localized)
            .with_window_seconds((shape.len - shape.prompt_end) as f64 / fr + 1.0);
        let a = estimators::nll_localized(&trace, &local).unwrap().value;
        let b = estimators::nll_global(&trace, Scope::ResponseOnly).unwrap().value;
        worst = worst.max((a - b).abs());
        ensure((a - b).abs() <= 1e-12, || format!("fixture {i}: localized {a} vs response-scoped global {b}"))?;

        let win = EstimatorConfig::new(Method::Windowed).with_window_seconds(shape.len as f64 / fr + 1.0);
        let a = estimators::nll_windowed(&trace, &win).unwrap().value;
        let b = estimators::nll_global(&trace, Scope::FullSequence).unwrap().value;
        worst = worst.max((a - b).abs());
        ensure((a - b).abs() <= 1e-12, || format!("fixture {i}: windowed {a} vs global {b}"))?;

        let same: Vec<ChannelStream> = trace
            .channels()
            .iter()
            .map(|c| {
                let ro = (0..shape.len).map(|t| (t >= shape.prompt_end).then(|| c.nll_conditional()[t])).collect();
                c.clone().with_response_only(ro)
            })
            .collect();
        let same = TokenTrace::new("same", fr, Some(shape.prompt_end), same).unwrap();
        for m in [Method::NormalizedGlobal, Method::NormalizedLocalized] {
            let cfg = EstimatorConfig::new(m).with_window_seconds(local.window_seconds);
            let v = estimators::nll_normalized(&same, &cfg).unwrap().value;
            ensure(v == 0.0, || format!("fixture {i}: {m} with identical streams gave {v}"))?;
        }
    }
    Ok(format!("1000 fixtures, max deviation {worst:.1e}"))
}

// Frozen Monte-Carlo estimates (400k pairs) of per-pair accuracy on the pulse fixture.
const PULSE_ORACLE_LOCALIZED: f64 = 0.999985;
const PULSE_ORACLE_GLOBAL: f64 = 0.6615;

fn pulse_separation() -> Outcome_ {
    let cfg = PulseConfig::default();
    ensure(cfg.frames() == (125, 50, 5) && cfg.n_pairs == 200, || "unexpected pulse layout".into())?;
    let pairs = synth::pulse_pairs(&cfg).map_err(|e| e.to_string())?;
    let opts = BenchmarkOptions::default();
    let tasks = cfg.tasks.clone();
    let run = |m: Method| {
        let r = benchmark::run_pairs(&pairs, &tasks, &EstimatorConfig::new(m), None, &opts).unwrap();
        r.accuracies[0].clone()
    };
    let local = run(Method::Localized);
    let global = run(Method::Global);
    let band = |p: f64| {
        let lo = binomial_quantile(200, p, 0.025) as f64 / 2.0;
        let hi = binomial_quantile(200, p, 0.975) as f64 / 2.0;
        (lo, hi)
    };
    let (llo, lhi) = band(PULSE_ORACLE_LOCALIZED);
    let (glo, ghi) = band(PULSE_ORACLE_GLOBAL);
    let detail = format!(
        "localized {:.2}% (oracle band [{llo}, {lhi}]), global {:.2}% CI [{:.1}, {:.1}] (oracle band [{glo}, {ghi}])",
        local.accuracy_percent, global.accuracy_percent, global.ci95.0, global.ci95.1
    );
    ensure(local.accuracy_percent >= 95.0, || format!("localized below 95%: {detail}"))?;
    ensure(global.accuracy_percent <= 75.0, || format!("global above 75%: {detail}"))?;
    ensure((llo..=lhi).contains(&local.accuracy_percent), || format!("localized outside oracle band: {detail}"))?;
    ensure((glo..=ghi).contains(&global.accuracy_percent), || format!("global outside oracle band: {detail}"))?;
    let g_oracle = PULSE_ORACLE_GLOBAL * 100.0;
    ensure(global.ci95.0 <= g_oracle && g_oracle <= global.ci95.1, || {
        format!("oracle outside bootstrap CI: {detail}")
    })?;
    Ok(detail)
}

fn correlation() -> Outcome_ {
    let dir = fixtures().join("correlation");
    let scores = read_score_matrix(File::open(dir.join("likelihood_scores.csv")).unwrap()).unwrap();
    let ratings = stats::read_mos(File::open(dir.join("mos_ratings.csv")).unwrap()).unwrap();
    let mos = stats::aggregate_mos(&ratings, SdKind::Sample).unwrap().column();
    let col = |m: &str| ScoreColumn::from_rows(&scores, m, None).unwrap();
    let mut lines = Vec::new();
    let mut band_ok = false;
    let mut order_ok = true;
    for pairing in Pairing::ALL {
        let r = |m: &str| correlate_scores(&col(m), &mos, pairing).unwrap().pearson;
        let g = r("global");
        let ng = r("normalized_global");
        let nl = r("normalized_localized");
        let l = r("localized");
        band_ok |= (g - 0.64).abs() <= 0.10;
        order_ok &= ng > g;
        lines.push(format!(
            "{pairing}: global {g:.3}, normalized_global {ng:.3}, localized {l:.3}, normalized_localized {nl:.3} (informational)"
        ));
    }
    let detail = lines.join("; ");
    ensure(order_ok, || format!("normalized not above global: {detail}"))?;
    ensure(band_ok, || format!("global Pearson outside 0.64 +- 0.10 under both pairings: {detail}"))?;
    Ok(detail)
}

fn mos_ranks() -> Outcome_ {
    let ratings = stats::read_mos(File::open(fixtures().join("correlation/mos_ratings.csv")).unwrap()).unwrap();
    let s = stats::aggregate_mos(&ratings, SdKind::Sample).map_err(|e| e.to_string())?;
    let got: Vec<(String, String)> = s.models.iter().map(|m| (m.model.clone(), format!("{:.2}", m.average))).collect();
    let expected = [
        ("Llama-Mimi", "3.29"),
        ("Flow-SLM-1B-ext", "3.26"),
        ("Flow-SLM-1B", "3.26"),
        ("TASTE", "3.04"),
        ("TWIST-1.3B", "2.03"),
        ("Spirit-LM", "2.01"),
        ("GSLM", "1.86"),
        ("pGSLM", "1.71"),
    ];
    let want: Vec<(String, String)> = expected.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    ensure(got == want, || format!("ranking {got:?}"))?;
    ensure(s.models.iter().enumerate().all(|(i, m)| m.rank == i + 1), || "ranks not 1..8".into())?;
    Ok("Llama-Mimi rank 1 at 3.29, pGSLM rank 8 at 1.71, full order matches".into())
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, ties: bool) -> Vec<f64> {
    (0..n).map(|_| if ties { rng.gen_range(0..5) as f64 } else { StandardNormal.sample(&mut *rng) }).collect()
}

fn stats_oracles() -> Outcome_ {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut degenerate = 0;
    for i in 0..10_000 {
        let n = rng.gen_range(3..60);
        let ties = i % 2 == 0;
        let x = random_vector(&mut rng, n, ties);
        let y_ties = ties && rng.gen_bool(0.5);
        let y = random_vector(&mut rng, n, y_ties);
        for (name, lib, brute) in [
            ("pearson", stats::pearson(&x, &y).ok(), brute_pearson(&x, &y)),
            ("spearman", stats::spearman(&x, &y).ok(), brute_pearson(&brute_ranks(&x), &brute_ranks(&y))),
        ] {
            match (lib, brute) {
                (Some(a), Some(b)) => {
                    worst = worst.max((a - b).abs());
                    ensure((a - b).abs() <= 1e-10, || format!("vector {i}: {name} {a} vs brute force {b}"))?;
                }
                (None, None) => degenerate += 1,
                (a, b) => return Err(format!("vector {i}: {name} library {a:?} vs brute force {b:?}")),
            }
        }
    }
    let mut checked = 0;
    let mut worst_ci = 0.0f64;
    for n in [100usize, 200, 500] {
        for p in [0.2, 0.5, 0.66, 0.9] {
            for seed in 0..4u64 {
                let k = (p * n as f64).round() as usize;
                let outcomes: Vec<Outcome> =
                    (0..n).map(|i| if i < k { Outcome::Correct } else { Outcome::Incorrect }).collect();
                let (lo, hi) = bootstrap_ci(&outcomes, 10_000, seed).unwrap();
                let ph = k as f64 / n as f64;
                let elo = binomial_quantile(n as u64, ph, 0.025) as f64 / n as f64 * 100.0;
                let ehi = binomial_quantile(n as u64, ph, 0.975) as f64 / n as f64 * 100.0;
                let d = (lo - elo).abs().max((hi - ehi).abs());
                worst_ci = worst_ci.max(d);
                ensure(d <= 1.0, || {
                    format!("n={n} p={p} seed={seed}: bootstrap [{lo}, {hi}] vs binomial [{elo}, {ehi}]")
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "10000 vector pairs (max deviation {worst:.1e}, {degenerate} degenerate agreed), {checked} bootstrap fixtures (max gap {worst_ci:.2} points)"
    ))
}

fn benchmark_equivalence() -> Outcome_ {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = BenchmarkOptions { bootstrap_iterations: 200, ..Default::default() };
    let mut fixtures_run = 0;
    for f in 0..200 {
        let n_tasks = rng.gen_range(1..=3);
        let tasks: Vec<String> = (0..n_tasks).map(|t| format!("task{t}")).collect();
        let n = rng.gen_range(1..=20);
        let pairs: Vec<_> = (0..n)
            .map(|i| {
                let task = &tasks[rng.gen_range(0..n_tasks)];
                random_pair(&mut rng, &format!("p{i}"), task, f % 2 == 0)
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let manifest = BenchmarkManifest::load(write_benchmark(dir.path(), &pairs, &tasks)).unwrap();
        let method = Method::ALL[f % Method::ALL.len()];
        let cfg = EstimatorConfig::new(method);
        let report = benchmark::run_benchmark(&manifest, &cfg, None, &opts).map_err(|e| e.to_string())?;

        let mut naive: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for p in &pairs {
            let (Ok(sp), Ok(sn)) = (estimators::score(p.positive(), &cfg), estimators::score(p.negative(), &cfg))
            else {
                continue;
            };
            let credit = if sp.value < sn.value {
                1.0
            } else if sp.value == sn.value {
                0.5
            } else {
                0.0
            };
            let e = naive.entry(p.task()).or_default();
            e.0 += credit;
            e.1 += 1;
        }
        let got: BTreeMap<&str, (f64, usize)> =
            report.accuracies.iter().map(|t| (t.task.as_str(), (t.accuracy_percent, t.n_pairs))).collect();
        let want: BTreeMap<&str, (f64, usize)> =
            naive.iter().map(|(t, (c, n))| (*t, (c / *n as f64 * 100.0, *n))).collect();
        ensure(got == want, || format!("fixture {f} ({method}): {got:?} vs naive {want:?}"))?;
        fixtures_run += 1;
    }
    Ok(format!("{fixtures_run} fixtures of 1-20 pairs, all five methods, identical accuracies"))
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn near(rng: &mut ChaCha8Rng, v: &[f64], noise: f64) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            x + noise * z
        })
        .collect()
}

fn judge_pipeline() -> Outcome_ {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 16;
    let tasks = ["alpha_task", "gamma_task"];
    let models = ["alpha", "beta", "gamma"];
    let mut records = Vec::new();
    let mut items = Vec::new();
    for i in 0..120 {
        let task = tasks[i % 2];
        let id = format!("d{i}");
        items.push(JudgeItem::new(&id, task));
        for m in models {
            let pos = unit(&mut rng, dim);
            let neg = unit(&mut rng, dim);
            // each task has one model whose anchors sit near the positive
            let informative = (m == "alpha" && task == "alpha_task") || (m == "gamma" && task == "gamma_task");
            let anchor = |rng: &mut ChaCha8Rng| if informative { near(rng, &pos, 0.8) } else { unit(rng, dim) };
            let (prompt, generation) = (anchor(&mut rng), anchor(&mut rng));
            for (role, vector) in [
                (SegmentRole::Prompt, prompt),
                (SegmentRole::Generation, generation),
                (SegmentRole::Positive, pos.clone()),
                (SegmentRole::Negative, neg.clone()),
            ] {
                records.push(EmbeddingRecord {
                    segment_id: id.clone(),
                    segment_role: role,
                    embed_model: m.into(),
                    vector,
                });
            }
        }
    }
    let store = EmbeddingStore::from_records(records);
    let candidates: Vec<String> = models.iter().map(|s| s.to_string()).collect();
    let topline: BTreeMap<String, f64> = tasks.iter().map(|t| (t.to_string(), 60.0)).collect();
    let registry = judge::select_judges(&items, &store, &candidates, &topline).map_err(|e| e.to_string())?;

    let outcome = |m: &str, id: &str, anchor: SegmentRole| {
        let a = store.get(m, id, anchor).unwrap();
        let sp = brute_cosine(a, store.get(m, id, SegmentRole::Positive).unwrap());
        let sn = brute_cosine(a, store.get(m, id, SegmentRole::Negative).unwrap());
        (sp, sn, Outcome::higher_wins(sp, sn))
    };
    for task in tasks {
        let ids: Vec<&JudgeItem> = items.iter().filter(|it| it.task == task).collect();
        let mut best: Option<(&str, f64)> = None;
        for m in models {
            let credit: f64 = ids.iter().map(|it| outcome(m, &it.pair_id, SegmentRole::Prompt).2.credit()).sum();
            let acc = credit / ids.len() as f64 * 100.0;
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((m, acc));
            }
        }
        let (m, acc) = best.unwrap();
        let e = registry.get(task).ok_or_else(|| format!("no judge for {task}"))?;
        ensure(e.embed_model == m && e.dev_accuracy == acc && e.qualified == (acc >= 60.0), || {
            format!("{task}: selected {} at {} vs brute force {m} at {acc}", e.embed_model, e.dev_accuracy)
        })?;
    }
    let scores = judge::score_continuations(&registry, &items, &store, false, &BenchmarkOptions::default())
        .map_err(|e| e.to_string())?;
    for v in &scores.verdicts {
        let (sp, sn, o) = outcome(&v.embed_model, &v.pair_id, SegmentRole::Generation);
        ensure(o == v.outcome && (sp - v.sim_positive).abs() <= 1e-12 && (sn - v.sim_negative).abs() <= 1e-12, || {
            format!("{}: verdict {:?} vs brute force {o:?}", v.pair_id, v.outcome)
        })?;
    }

    let ids: Vec<String> = (0..1000).map(|i| format!("r{i}")).collect();
    let random = EmbeddingStore::from_records(synth::random_embeddings(&ids, &["random".to_string()], 256, 7));
    let rand_items: Vec<JudgeItem> = ids.iter().map(|id| JudgeItem::new(id, "random")).collect();
    let zero = BTreeMap::from([("random".to_string(), 0.0)]);
    let reg = judge::select_judges(&rand_items, &random, &["random".to_string()], &zero).unwrap();
    let acc = judge::score_continuations(&reg, &rand_items, &random, false, &BenchmarkOptions::default())
        .unwrap()
        .accuracies[0]
        .accuracy_percent;
    ensure((45.0..=55.0).contains(&acc), || format!("random-vector accuracy {acc}"))?;
    Ok(format!("selection and {} verdicts match brute force; random vectors score {acc:.1}%", scores.verdicts.len()))
}

fn main() {
    let known: BTreeMap<&str, BTreeSet<(String, String, String)>> = KNOWN_FAILURES
        .iter()
        .map(|(name, cells)| {
            (*name, cells.iter().map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string())).collect())
        })
        .collect();
    let (shap, shap_cells) = shapley_reproduction();
    let shap_cells: BTreeSet<(String, String, String)> = shap_cells.into_iter().collect();
    let results: Vec<(&str, Outcome_)> = vec![
        ("shapley reproduction", shap),
        ("shapley axioms", shapley_axioms()),
        ("estimator reductions", estimator_reductions()),
        ("pulse separation", pulse_separation()),
        ("correlation desk-check", correlation()),
        ("mos aggregation", mos_ranks()),
        ("statistics oracles", stats_oracles()),
        ("benchmark oracle equivalence", benchmark_equivalence()),
        ("judge pipeline", judge_pipeline()),
    ];
    let mut unexpected = 0;
    let mut passed = 0;
    for (name, r) in &results {
        match r {
            Ok(d) => {
                passed += 1;
                println!("[PASS] {name}: {d}");
                if known.contains_key(name) {
                    println!("       listed as a known failure but now passes; update KNOWN_FAILURES");
                    unexpected += 1;
                }
            }
            Err(d) => {
                println!("[FAIL] {name}: {d}");
                let expected = match known.get(name) {
                    Some(cells) if *name == "shapley reproduction" => *cells == shap_cells,
                    Some(_) => true,
                    None => false,
                };
                if expected {
                    println!("       known failure: published values disagree with their own inputs");
                } else {
                    unexpected += 1;
                }
            }
        }
    }
    println!("{passed}/{} criteria passed, {unexpected} unexpected", results.len());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
