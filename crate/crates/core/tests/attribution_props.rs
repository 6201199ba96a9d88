mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slm_eval::attribution::{
    advantage_of_pairs, evaluate_pair_coalitions, shapley, shapley_values, AdvantageWeighting, CoalitionTable,
};
use slm_eval::benchmark::{run_pairs, BenchmarkOptions};
use slm_eval::estimators::{self, EstimatorConfig, Method};
use slm_eval::trace::ContrastivePair;

use common::*;

fn game(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u32..=200).prop_map(|v| v as f64 * 0.5), (1 << n) - 1).prop_map(|mut v| {
        v.insert(0, 50.0);
        v
    })
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("p{i}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn permuting_players_permutes_phi((n, v, perm) in (2usize..=6).prop_flat_map(|n| {
        (Just(n), game(n), Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
    })) {
        let players = names(n);
        let rows = (1..1u32 << n).map(|m| {
            let members = (0..n).filter(|i| m >> i & 1 == 1).map(|i| players[i].clone()).collect();
            (members, vec![v[m as usize]])
        });
        let table = CoalitionTable::new(players.clone(), vec!["t".into()], 50.0, rows.clone().collect::<Vec<_>>()).unwrap();
        let permuted_players: Vec<String> = perm.iter().map(|&i| players[i].clone()).collect();
        let permuted = CoalitionTable::new(permuted_players.clone(), vec!["t".into()], 50.0, rows.collect::<Vec<_>>()).unwrap();
        let a = shapley(&table).unwrap();
        let b = shapley(&permuted).unwrap();
        for (j, name) in permuted_players.iter().enumerate() {
            let i = players.iter().position(|p| p == name).unwrap();
            prop_assert!((a.per_task[0][i] - b.per_task[0][j]).abs() <= 1e-12);
        }
        prop_assert!(a.efficiency_residual <= 1e-9);
    }

    #[test]
    fn average_column_is_the_shapley_value_of_the_average_game(v1 in game(3), v2 in game(3)) {
        let avg: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| (a + b) / 2.0).collect();
        let players = names(3);
        let rows: Vec<_> = (1..8u32).map(|m| {
            let members = (0..3).filter(|i| m >> i & 1 == 1).map(|i| players[i].clone()).collect();
            (members, vec![v1[m as usize], v2[m as usize]])
        }).collect();
        let table = CoalitionTable::new(players, vec!["x".into(), "y".into()], 50.0, rows).unwrap();
        let r = shapley(&table).unwrap();
        let direct = shapley_values(3, &avg).unwrap();
        for (a, d) in r.average.iter().zip(&direct) {
            prop_assert!((a - d).abs() <= 1e-12);
        }
    }

    #[test]
    fn advantage_components_add_up(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<ContrastivePair> = (0..6)
            .map(|i| {
                let shape = Shape { channels: TYPES.len(), ..Shape::random(&mut rng) };
                pair_with_shape(&mut rng, &format!("p{i}"), "t", false, shape)
            })
            .collect();
        let players: Vec<String> = TYPES.iter().map(|s| s.to_string()).collect();
        let cfg = EstimatorConfig::new(Method::Global);
        let prof = advantage_of_pairs(&pairs, &cfg, &players, AdvantageWeighting::FrameCount).unwrap();
        let brute: f64 = pairs.iter().map(|p| {
            estimators::score(p.negative(), &cfg).unwrap().value - estimators::score(p.positive(), &cfg).unwrap().value
        }).sum::<f64>() / pairs.len() as f64;
        prop_assert!((prof.total - brute).abs() <= 1e-9);
        prop_assert!((prof.components.iter().sum::<f64>() - prof.total).abs() <= 1e-9);
    }
}

#[test]
fn full_coalition_matches_a_plain_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs: Vec<ContrastivePair> = (0..30).map(|i| random_pair(&mut rng, &format!("p{i}"), "t", true)).collect();
    let players: Vec<String> = TYPES.iter().map(|s| s.to_string()).collect();
    let opts = BenchmarkOptions { bootstrap_iterations: 100, ..Default::default() };
    let cfg = EstimatorConfig::new(Method::Localized);
    let (table, _) = evaluate_pair_coalitions(&pairs, &["t".to_string()], &cfg, &players, 50.0, &opts).unwrap();
    let all: BTreeSet<String> = players.iter().cloned().collect();
    let plain = run_pairs(&pairs, &["t".to_string()], &cfg, Some(&all), &opts).unwrap();
    assert_eq!(table.value(0b111, 0), plain.accuracies[0].accuracy_percent);
}
