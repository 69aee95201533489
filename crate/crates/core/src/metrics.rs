//! Acquisition profiling and difficulty-stratified evaluation.

use std::borrow::Borrow;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use crate::acquisition::predictive_entropy;
use crate::cartography::{DatamapEntry, Difficulty};
use crate::classifier::Classifier;
use crate::pool::Example;
use crate::{Error, Result};

/// Profile of one acquisition round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// Jaccard similarity of labelled-set tokens and remaining-pool tokens.
    pub input_diversity: f64,
    /// Mean predictive entropy of the acquired batch under the reference model.
    pub output_uncertainty: f64,
    pub class_distribution: Vec<f64>,
    pub acquisition_factor: BTreeMap<String, f64>,
}

/// Jaccard similarity `|a ∩ b| / |a ∪ b|`, defined as 0 when both are empty.
pub fn input_diversity<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    let inter = a.iter().filter(|t| b.contains(t)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Distinct tokens of `examples`. Examples without tokens are skipped with a warning.
pub fn token_set<E: Borrow<Example>>(examples: &[E]) -> HashSet<&str> {
    let mut out = HashSet::new();
    let mut bare = 0usize;
    for e in examples {
        let e = e.borrow();
        if e.tokens.is_empty() {
            bare += 1;
        }
        out.extend(e.tokens.iter().map(String::as_str));
    }
    if bare > 0 {
        log::warn!("{bare} example(s) carry no tokens and do not contribute to input diversity");
    }
    out
}

/// Mean predictive entropy (nats) of `acquired` under `reference`.
pub fn output_uncertainty<E: Borrow<Example>>(
    reference: &Classifier,
    acquired: &[E],
) -> Result<f64> {
    if acquired.is_empty() {
        return Err(Error::Argument("output uncertainty of an empty set".into()));
    }
    let probs = reference.predict_proba(acquired)?;
    let mut total = 0.0;
    for r in probs.rows() {
        total += predictive_entropy(r)?;
    }
    Ok(total / acquired.len() as f64)
}

/// Fraction of each gold label among `acquired`.
pub fn class_distribution<E: Borrow<Example>>(
    acquired: &[E],
    num_classes: usize,
) -> Result<Vec<f64>> {
    if acquired.is_empty() {
        return Err(Error::Argument("class distribution of an empty set".into()));
    }
    let mut counts = vec![0usize; num_classes];
    for e in acquired {
        let label = e.borrow().label;
        *counts.get_mut(label).ok_or_else(|| {
            Error::Argument(format!("label {label} outside {num_classes} classes"))
        })? += 1;
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / acquired.len() as f64)
        .collect())
}

/// Per-source acquired count relative to the count expected under uniform
/// random sampling from the unlabelled pool `pool_before` (source -> size).
/// Sources with no unlabelled examples are omitted.
pub fn acquisition_factor<E: Borrow<Example>>(
    batch: &[E],
    pool_before: &BTreeMap<String, usize>,
) -> Result<BTreeMap<String, f64>> {
    if batch.is_empty() {
        return Err(Error::Argument(
            "acquisition factor of an empty batch".into(),
        ));
    }
    let pool_total: usize = pool_before.values().sum();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for e in batch {
        let s = e.borrow().source.as_str();
        if pool_before.get(s).copied().unwrap_or(0) == 0 {
            return Err(Error::Argument(format!(
                "batch example {} comes from source {s:?} absent from the pool",
                e.borrow().id
            )));
        }
        *counts.entry(s).or_insert(0) += 1;
    }
    let k = batch.len() as f64;
    Ok(pool_before
        .iter()
        .filter(|(_, &n)| n > 0)
        .map(|(s, &n)| {
            let share = n as f64 / pool_total as f64;
            let got = counts.get(s.as_str()).copied().unwrap_or(0) as f64;
            (s.clone(), got / (k * share))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumResult {
    pub count: usize,
    pub accuracy: f64,
}

/// Accuracy per difficulty class. Classes with no test examples are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedResult {
    pub strata: BTreeMap<Difficulty, StratumResult>,
    pub overall: f64,
    pub total: usize,
}

impl StratifiedResult {
    /// Count-weighted mean of the per-class accuracies.
    pub fn recombined(&self) -> f64 {
        let n: usize = self.strata.values().map(|s| s.count).sum();
        self.strata
            .values()
            .map(|s| s.count as f64 * s.accuracy)
            .sum::<f64>()
            / n as f64
    }
}

pub fn stratified_accuracy<E: Borrow<Example>>(
    model: &Classifier,
    test: &[E],
    test_datamap: &[DatamapEntry],
) -> Result<StratifiedResult> {
    if test.is_empty() {
        return Err(Error::Argument(
            "stratified accuracy of an empty test set".into(),
        ));
    }
    let lookup: HashMap<u64, Difficulty> = test_datamap
        .iter()
        .map(|e| (e.example_id, e.difficulty))
        .collect();
    let classes = test
        .iter()
        .map(|e| {
            let id = e.borrow().id;
            lookup
                .get(&id)
                .copied()
                .ok_or_else(|| Error::Argument(format!("test id {id} has no datamap entry")))
        })
        .collect::<Result<Vec<_>>>()?;
    let pred = model.predict(test)?;
    let mut tally: BTreeMap<Difficulty, (usize, usize)> = BTreeMap::new();
    let mut hits = 0usize;
    for ((e, p), d) in test.iter().zip(&pred).zip(&classes) {
        let hit = usize::from(*p == e.borrow().label);
        hits += hit;
        let t = tally.entry(*d).or_insert((0, 0));
        t.0 += 1;
        t.1 += hit;
    }
    Ok(StratifiedResult {
        strata: tally
            .into_iter()
            .map(|(d, (n, h))| {
                (
                    d,
                    StratumResult {
                        count: n,
                        accuracy: h as f64 / n as f64,
                    },
                )
            })
            .collect(),
        overall: hits as f64 / test.len() as f64,
        total: test.len(),
    })
}
