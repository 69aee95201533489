mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use cartal::acquisition::{predictive_entropy, score_bald, score_mcme};
use cartal::cartography::{compute_datamap, DifficultyCounts, DifficultyThresholds, DynamicsTrace};
use cartal::classifier::ProbMatrix;
use cartal::metrics::{acquisition_factor, input_diversity};
use cartal::pool::Example;
use cartal::seed::rng;
use common::*;
use proptest::prelude::*;
use rand::Rng as _;

fn mc_samples(seed: u64, t: usize, c: usize, n: usize) -> (Vec<ProbMatrix>, Vec<Vec<Vec<f64>>>) {
    let mut r = rng(seed);
    // per_example[i][t] is a probability vector
    let per_example: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| (0..t).map(|_| random_probs(&mut r, c)).collect())
        .collect();
    let mats = (0..t)
        .map(|s| {
            ProbMatrix::from_rows(&per_example.iter().map(|e| e[s].clone()).collect::<Vec<_>>())
                .unwrap()
        })
        .collect();
    (mats, per_example)
}

proptest! {
    #[test]
    fn entropy_matches_oracle(seed in any::<u64>(), c in 1usize..=5) {
        let mut r = rng(seed);
        let p = random_probs(&mut r, c);
        prop_assert!((predictive_entropy(&p).unwrap() - oracle_entropy(&p)).abs() <= 1e-9);
    }

    #[test]
    fn mc_scores_match_oracles(seed in any::<u64>(), t in 2usize..=8, c in 2usize..=5, n in 1usize..20) {
        let (mats, raw) = mc_samples(seed, t, c, n);
        let ids: Vec<u64> = (0..n as u64).collect();
        let mcme = score_mcme(&mats, &ids).unwrap();
        let bald = score_bald(&mats, &ids).unwrap();
        for i in 0..n {
            prop_assert!((mcme[i].score - oracle_mcme(&raw[i])).abs() <= 1e-9);
            prop_assert!((bald[i].score - oracle_bald(&raw[i])).abs() <= 1e-9);
            prop_assert!(bald[i].score >= 0.0);
            prop_assert!(bald[i].score <= mcme[i].score + 1e-12);
        }
    }

    #[test]
    fn jaccard_matches_oracle(a in proptest::collection::btree_set("[a-f]{1,2}", 0..12),
                              b in proptest::collection::btree_set("[a-f]{1,2}", 0..12)) {
        let ha: HashSet<String> = a.iter().cloned().collect();
        let hb: HashSet<String> = b.iter().cloned().collect();
        prop_assert!((input_diversity(&ha, &hb) - oracle_jaccard(&a, &b)).abs() <= 1e-12);
    }

    #[test]
    fn acquisition_factor_matches_oracle(seed in any::<u64>(), k in 1usize..40) {
        let mut r = rng(seed);
        let names = ["a", "b", "c", "d"];
        let pool: BTreeMap<String, usize> = names.iter().map(|s| (s.to_string(), r.random_range(1..100))).collect();
        let batch: Vec<Example> = (0..k)
            .map(|i| Example {
                id: i as u64,
                source: names[r.random_range(0..names.len())].into(),
                features: vec![0.0],
                tokens: vec![],
                label: 0,
            })
            .collect();
        let got = acquisition_factor(&batch, &pool).unwrap();
        let sources: Vec<&str> = batch.iter().map(|e| e.source.as_str()).collect();
        let want = oracle_factor(&sources, &pool);
        prop_assert_eq!(got.len(), want.len());
        for (s, w) in &want {
            prop_assert!((got[s] - w).abs() <= 1e-9);
        }
    }

    #[test]
    fn datamap_matches_oracle_and_partitions(seed in any::<u64>(), n in 1usize..40) {
        let mut r = rng(seed);
        let traces: Vec<DynamicsTrace> = (0..n)
            .map(|i| {
                let len = r.random_range(1..12);
                DynamicsTrace {
                    example_id: i as u64,
                    confidences: (0..len).map(|_| r.random::<f64>()).collect(),
                    correct: (0..len).map(|_| r.random_bool(0.5)).collect(),
                }
            })
            .collect();
        let map = compute_datamap(&traces, &DifficultyThresholds::default()).unwrap();
        prop_assert_eq!(map.len(), n);
        for (t, e) in traces.iter().zip(&map) {
            let o = oracle_datamap(&t.confidences, &t.correct);
            prop_assert!((e.mean_confidence - o.mean).abs() <= 1e-12);
            prop_assert!((e.variability - o.std).abs() <= 1e-12);
            prop_assert!((e.correctness - o.correctness).abs() <= 1e-12);
            prop_assert_eq!(e.difficulty, o.difficulty);
        }
        prop_assert_eq!(DifficultyCounts::from_datamap(&map).total(), n);
    }
}

#[test]
fn empty_trace_is_rejected_by_id() {
    let traces = vec![DynamicsTrace {
        example_id: 41,
        confidences: vec![],
        correct: vec![],
    }];
    let err = compute_datamap(&traces, &DifficultyThresholds::default()).unwrap_err();
    assert!(err.to_string().contains("41"), "{err}");
}

#[test]
fn jaccard_of_two_empty_sets_is_zero() {
    let e: BTreeSet<String> = BTreeSet::new();
    assert_eq!(oracle_jaccard(&e, &e), 0.0);
    assert_eq!(
        input_diversity::<String>(&HashSet::new(), &HashSet::new()),
        0.0
    );
}
