mod common;

use std::collections::BTreeSet;

use cartal::acquisition::{top_k, AcquisitionScore, StrategyKind};
use cartal::config::ExperimentConfig;
use cartal::experiment::{prepare, replay, run_al_prepared, run_suite};
use cartal::Error;
use common::small_config_toml;
use proptest::prelude::*;

fn config(
    n: usize,
    seed_size: usize,
    k: usize,
    rounds: usize,
    strategies: &[&str],
) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&small_config_toml(
        n,
        seed_size,
        k,
        rounds,
        strategies,
        &[1, 2],
    ))
    .unwrap()
}

#[test]
fn rounds_are_disjoint_and_replay_reconstructs_state() {
    let prep = prepare(&config(80, 20, 15, 4, &["random", "mcme", "bald", "dal"])).unwrap();
    let suite = run_suite(&prep).unwrap();
    assert_eq!(suite.failed(), 0);
    for rec in &suite.runs {
        let out = rec.outcome.as_ref().unwrap();
        let mut seen: BTreeSet<u64> = out.seed_labelled.clone();
        assert_eq!(seen.len(), 20);
        for (r, log) in out.rounds.iter().enumerate() {
            assert_eq!(log.round, r);
            assert_eq!(log.labelled_size, 20 + 15 * r);
            assert_eq!(log.acquired.len(), 15);
            for id in &log.acquired {
                assert!(seen.insert(*id), "{} acquired {id} twice", rec.strategy);
                assert!(prep.pool.get(*id).is_some());
            }
            let total: f64 = log.metrics.class_distribution.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert_eq!(out.final_labelled, seen);
        assert_eq!(out.final_labelled.len(), 20 + 4 * 15);
        let state = replay(&out.seed_labelled, &prep.pool, &out.rounds).unwrap();
        assert_eq!(state.labelled(), &out.final_labelled);
        assert!(state.labelled().is_disjoint(state.unlabelled()));
        assert_eq!(state.len(), prep.pool.len());
    }
}

#[test]
fn seed_set_is_shared_across_strategies() {
    let prep = prepare(&config(60, 25, 5, 1, &["random", "mcme"])).unwrap();
    let a = run_al_prepared(&prep, StrategyKind::Random, 7).unwrap();
    let b = run_al_prepared(&prep, StrategyKind::Mcme, 7).unwrap();
    assert_eq!(a.seed_labelled, b.seed_labelled);
}

#[test]
fn exhausting_the_pool_is_allowed() {
    // 3 sources x 40, 10% held out per source -> 108 pooled examples.
    let prep = prepare(&config(40, 18, 30, 3, &["mcme"])).unwrap();
    assert_eq!(prep.pool.len(), 108);
    let out = run_al_prepared(&prep, StrategyKind::Mcme, 1).unwrap();
    assert_eq!(out.final_labelled.len(), prep.pool.len());
}

#[test]
fn running_out_of_pool_is_a_capacity_error() {
    let prep = prepare(&config(40, 18, 30, 4, &["random"])).unwrap();
    let err = run_al_prepared(&prep, StrategyKind::Random, 1).unwrap_err();
    assert!(matches!(err.root(), Error::Capacity(_)), "{err}");
    assert!(err.to_string().contains("round 3"), "{err}");
}

#[test]
fn oversized_seed_set_is_a_capacity_error() {
    let prep = prepare(&config(40, 500, 1, 1, &["random"])).unwrap();
    let err = run_al_prepared(&prep, StrategyKind::Random, 1).unwrap_err();
    assert!(matches!(err.root(), Error::Capacity(_)), "{err}");
}

#[test]
fn dal_on_an_empty_labelled_set_fails_without_stopping_the_suite() {
    let prep = prepare(&config(40, 0, 5, 1, &["random", "dal"])).unwrap();
    let suite = run_suite(&prep).unwrap();
    assert_eq!(suite.runs.len(), 4);
    assert_eq!(suite.failed(), 2);
    assert!(suite
        .runs
        .iter()
        .filter(|r| r.outcome.is_err())
        .all(|r| r.strategy == StrategyKind::Dal));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn top_k_ignores_input_order(scores in proptest::collection::vec(0u8..5, 1..40), k in 0usize..40, rot in 0usize..40) {
        let list: Vec<AcquisitionScore> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| AcquisitionScore { example_id: i as u64 * 7 % 101, score: f64::from(s) })
            .collect();
        let mut shuffled = list.clone();
        shuffled.rotate_left(rot % list.len());
        shuffled.reverse();
        let k = k.min(list.len());
        let a: BTreeSet<u64> = top_k(&list, k).into_iter().collect();
        let b: BTreeSet<u64> = top_k(&shuffled, k).into_iter().collect();
        prop_assert_eq!(a.len(), k);
        prop_assert_eq!(a, b);
    }
}
