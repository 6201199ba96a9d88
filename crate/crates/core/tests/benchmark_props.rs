mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slm_eval::benchmark::{compare_pair, run_pairs, BenchmarkOptions};
use slm_eval::estimators::{EstimatorConfig, Method};
use slm_eval::trace::{ChannelStream, ContrastivePair, TokenTrace};

use common::*;

fn map_trace(t: &TokenTrace, f: impl Fn(f64) -> f64 + Copy, g: impl Fn(f64) -> f64 + Copy) -> TokenTrace {
    let channels = t
        .channels()
        .iter()
        .map(|c| {
            let mut out =
                ChannelStream::new(c.name(), c.token_type(), c.nll_conditional().iter().map(|v| f(*v)).collect());
            if let Some(m) = c.valid_mask() {
                out = out.with_valid_mask(m.to_vec());
            }
            if let Some(ro) = c.nll_response_only() {
                out = out.with_response_only(ro.iter().map(|v| v.map(g)).collect());
            }
            out
        })
        .collect();
    TokenTrace::new(t.utterance_id(), t.frame_rate_hz(), t.prompt_end_frame(), channels).unwrap()
}

fn map_pair(p: &ContrastivePair, f: impl Fn(f64) -> f64 + Copy, g: impl Fn(f64) -> f64 + Copy) -> ContrastivePair {
    ContrastivePair::new(
        p.pair_id(),
        p.task(),
        map_trace(p.positive(), f, g),
        map_trace(p.negative(), f, g),
        None,
        true,
    )
    .unwrap()
}

fn pair_from_seed(seed: u64) -> ContrastivePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_pair(&mut rng, "p", "t", true)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn positive_scaling_preserves_outcome(seed in any::<u64>(), k in -3i32..4) {
        let p = pair_from_seed(seed);
        let s = 2f64.powi(k);
        let q = map_pair(&p, |v| v * s, |v| v * s);
        for m in Method::ALL {
            let cfg = EstimatorConfig::new(m);
            let (a, b) = (compare_pair(&p, &cfg, None), compare_pair(&q, &cfg, None));
            prop_assert_eq!(a.map(|r| r.outcome).ok(), b.map(|r| r.outcome).ok(), "{}", m);
        }
    }

    #[test]
    fn common_shift_preserves_outcome(seed in any::<u64>(), c in 0u32..8) {
        let p = pair_from_seed(seed);
        let c = c as f64 * 0.5;
        let q = map_pair(&p, |v| v + c, |v| v);
        for m in Method::ALL {
            let cfg = EstimatorConfig::new(m);
            let (a, b) = (compare_pair(&p, &cfg, None), compare_pair(&q, &cfg, None));
            prop_assert_eq!(a.map(|r| r.outcome).ok(), b.map(|r| r.outcome).ok(), "{}", m);
        }
    }

    #[test]
    fn every_subset_run_completes_in_range(seed in any::<u64>(), bits in 1u8..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<ContrastivePair> = (0..10).map(|i| random_pair(&mut rng, &format!("p{i}"), "t", false)).collect();
        let types: BTreeSet<String> = TYPES.iter().enumerate().filter(|(i, _)| bits >> i & 1 == 1).map(|(_, t)| t.to_string()).collect();
        let opts = BenchmarkOptions { bootstrap_iterations: 100, ..Default::default() };
        let r = run_pairs(&pairs, &["t".to_string()], &EstimatorConfig::new(Method::Global), Some(&types), &opts).unwrap();
        prop_assert_eq!(r.comparisons.len() + r.failures.len(), pairs.len());
        for a in &r.accuracies {
            prop_assert!((0.0..=100.0).contains(&a.accuracy_percent));
            prop_assert!(a.ci95.0 <= a.accuracy_percent && a.accuracy_percent <= a.ci95.1);
        }
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tasks: Vec<String> = vec!["a".into(), "b".into()];
    let pairs: Vec<ContrastivePair> =
        (0..60).map(|i| random_pair(&mut rng, &format!("p{i}"), &tasks[i % 2], false)).collect();
    let opts = BenchmarkOptions { bootstrap_iterations: 500, seed: 3, ..Default::default() };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_pairs(&pairs, &tasks, &EstimatorConfig::new(Method::Windowed), None, &opts).unwrap())
    };
    assert_eq!(run(1), run(4));
}
