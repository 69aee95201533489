//! Training dynamics, datamaps and difficulty-based data selection.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, Classifier, ClassifierConfig, TrainConfig};
use crate::experiment::RoundLog;
use crate::pool::Example;
use crate::seed::SeedPath;
use crate::{Error, Result};

/// Difficulty class, ordered from hardest to easiest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    Impossible,
    Hard,
    Medium,
    Easy,
}

impl Difficulty {
    /// Easiest first, matching the usual E/M/H/I reading order.
    pub const ALL: [Difficulty; 4] = [
        Difficulty::Easy,
        Difficulty::Medium,
        Difficulty::Hard,
        Difficulty::Impossible,
    ];

    pub fn letter(self) -> char {
        match self {
            Difficulty::Easy => 'E',
            Difficulty::Medium => 'M',
            Difficulty::Hard => 'H',
            Difficulty::Impossible => 'I',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::Impossible => "impossible",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A non-empty set of difficulty classes, written as letters, e.g. `"EMH"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Combo(BTreeSet<Difficulty>);

impl Combo {
    /// The five training-set compositions compared in the difficulty-split experiment.
    pub fn standard() -> Vec<Combo> {
        ["EM", "EMH", "MH", "HI", "EMHI"]
            .iter()
            .map(|s| s.parse().expect("valid combo"))
            .collect()
    }

    pub fn classes(&self) -> impl Iterator<Item = Difficulty> + '_ {
        // Easy first.
        self.0.iter().rev().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.classes().try_for_each(|d| write!(f, "{}", d.letter()))
    }
}

impl FromStr for Combo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = BTreeSet::new();
        for ch in s.trim().chars() {
            let d = Difficulty::ALL
                .into_iter()
                .find(|d| d.letter() == ch.to_ascii_uppercase())
                .ok_or_else(|| {
                    Error::Config(format!("invalid difficulty letter {ch:?} in combo {s:?}"))
                })?;
            set.insert(d);
        }
        if set.is_empty() {
            return Err(Error::Config("difficulty combo must not be empty".into()));
        }
        Ok(Combo(set))
    }
}

impl TryFrom<String> for Combo {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Combo> for String {
    fn from(c: Combo) -> String {
        c.to_string()
    }
}

/// Upper-inclusive mean-confidence bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DifficultyThresholds {
    pub impossible_max: f64,
    pub hard_max: f64,
    pub medium_max: f64,
}

impl Default for DifficultyThresholds {
    fn default() -> Self {
        DifficultyThresholds {
            impossible_max: 0.25,
            hard_max: 0.5,
            medium_max: 0.75,
        }
    }
}

impl DifficultyThresholds {
    pub fn validate(&self) -> Result<()> {
        if 0.0 < self.impossible_max
            && self.impossible_max < self.hard_max
            && self.hard_max < self.medium_max
            && self.medium_max < 1.0
        {
            Ok(())
        } else {
            Err(Error::Config(
                "difficulty thresholds must satisfy 0 < impossible_max < hard_max < medium_max < 1"
                    .into(),
            ))
        }
    }

    pub fn classify(&self, mean_confidence: f64) -> Difficulty {
        if mean_confidence <= self.impossible_max {
            Difficulty::Impossible
        } else if mean_confidence <= self.hard_max {
            Difficulty::Hard
        } else if mean_confidence <= self.medium_max {
            Difficulty::Medium
        } else {
            Difficulty::Easy
        }
    }
}

/// Gold-label confidence and correctness of one example across snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTrace {
    pub example_id: u64,
    pub confidences: Vec<f64>,
    pub correct: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatamapEntry {
    pub example_id: u64,
    pub mean_confidence: f64,
    /// Population standard deviation of the confidences.
    pub variability: f64,
    pub correctness: f64,
    pub difficulty: Difficulty,
}

pub fn compute_datamap(
    traces: &[DynamicsTrace],
    thresholds: &DifficultyThresholds,
) -> Result<Vec<DatamapEntry>> {
    thresholds.validate()?;
    let mut short = 0usize;
    let out = traces
        .iter()
        .map(|t| {
            let n = t.confidences.len();
            if n == 0 || t.correct.len() != n {
                return Err(Error::Argument(format!(
                    "trace for id {} has {} confidences and {} correctness flags",
                    t.example_id,
                    n,
                    t.correct.len()
                )));
            }
            if n < 2 {
                short += 1;
            }
            let nf = n as f64;
            let mean = t.confidences.iter().sum::<f64>() / nf;
            let var = t
                .confidences
                .iter()
                .map(|c| (c - mean).powi(2))
                .sum::<f64>()
                / nf;
            Ok(DatamapEntry {
                example_id: t.example_id,
                mean_confidence: mean,
                variability: var.sqrt(),
                correctness: t.correct.iter().filter(|&&c| c).count() as f64 / nf,
                difficulty: thresholds.classify(mean),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if short > 0 {
        log::warn!(
            "{short} trace(s) have a single snapshot; their variability is 0 by construction"
        );
    }
    Ok(out)
}

/// Datamap plus the model that produced it.
#[derive(Debug, Clone)]
pub struct Cartography {
    pub entries: Vec<DatamapEntry>,
    pub model: Classifier,
    pub snapshots: usize,
}

impl Cartography {
    pub fn by_id(&self) -> HashMap<u64, &DatamapEntry> {
        self.entries.iter().map(|e| (e.example_id, e)).collect()
    }
}

/// Trains a fresh model on all of `train` and records the training dynamics
/// of `probe`. There is no validation set, so training runs for exactly
/// `tcfg.max_epochs` epochs.
pub fn run_cartography<E: Borrow<Example>, P: Borrow<Example>>(
    train: &[E],
    probe: &[P],
    config: &ClassifierConfig,
    tcfg: &TrainConfig,
    thresholds: &DifficultyThresholds,
) -> Result<Cartography> {
    let mut traces: Vec<DynamicsTrace> = probe
        .iter()
        .map(|e| DynamicsTrace {
            example_id: e.borrow().id,
            confidences: vec![],
            correct: vec![],
        })
        .collect();
    let mut snapshots = 0usize;
    let model = classifier::fit_with_dynamics(config, train, &[], tcfg, probe, &mut |snap| {
        snapshots += 1;
        for ((t, p), (pred, e)) in traces
            .iter_mut()
            .zip(&snap.gold_probs)
            .zip(snap.predictions.iter().zip(probe))
        {
            t.confidences.push(*p);
            t.correct.push(*pred == e.borrow().label);
        }
    })?;
    if snapshots < 2 {
        return Err(Error::InsufficientDynamics { snapshots });
    }
    let entries = compute_datamap(&traces, thresholds)?;
    Ok(Cartography {
        entries,
        model,
        snapshots,
    })
}

/// Per source, drops the `floor(fraction * n_source)` entries with the smallest
/// `mean_confidence * variability` (ties: lower id first) and returns the
/// retained ids.
pub fn ablate_hard_to_learn(
    datamap: &[DatamapEntry],
    sources: &HashMap<u64, String>,
    fraction: f64,
) -> Result<BTreeSet<u64>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Argument(format!(
            "ablation fraction {fraction} outside [0, 1)"
        )));
    }
    let mut by_source: BTreeMap<&str, Vec<&DatamapEntry>> = BTreeMap::new();
    for e in datamap {
        let s = sources
            .get(&e.example_id)
            .ok_or_else(|| Error::Argument(format!("no source known for id {}", e.example_id)))?;
        by_source.entry(s).or_default().push(e);
    }
    let mut retained = BTreeSet::new();
    for entries in by_source.values_mut() {
        let drop = (fraction * entries.len() as f64).floor() as usize;
        entries.sort_by(|a, b| {
            (a.mean_confidence * a.variability)
                .total_cmp(&(b.mean_confidence * b.variability))
                .then(a.example_id.cmp(&b.example_id))
        });
        retained.extend(entries[drop..].iter().map(|e| e.example_id));
    }
    Ok(retained)
}

/// Samples `n / |combo|` ids uniformly from each difficulty class in `combo`.
pub fn build_difficulty_split(
    datamap: &[DatamapEntry],
    combo: &Combo,
    n: usize,
    rng_seed: u64,
) -> Result<BTreeSet<u64>> {
    if combo.is_empty() {
        return Err(Error::Argument("empty difficulty combo".into()));
    }
    if !n.is_multiple_of(combo.len()) {
        return Err(Error::Argument(format!(
            "split size {n} is not divisible by the {} classes of {combo}",
            combo.len()
        )));
    }
    let per_class = n / combo.len();
    let mut out = BTreeSet::new();
    for d in combo.classes() {
        let members: Vec<u64> = datamap
            .iter()
            .filter(|e| e.difficulty == d)
            .map(|e| e.example_id)
            .collect();
        if members.len() < per_class {
            return Err(Error::Capacity(format!(
                "difficulty class {d} holds {} examples, {per_class} required for {combo}",
                members.len()
            )));
        }
        let mut rng = SeedPath::new(rng_seed).label(d.name()).rng();
        out.extend(
            index::sample(&mut rng, members.len(), per_class)
                .into_iter()
                .map(|i| members[i]),
        );
    }
    Ok(out)
}

/// Example counts per difficulty class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DifficultyCounts([usize; 4]);

impl DifficultyCounts {
    pub fn get(&self, d: Difficulty) -> usize {
        self.0[d.slot()]
    }

    pub fn add(&mut self, d: Difficulty) {
        self.0[d.slot()] += 1;
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn from_datamap(datamap: &[DatamapEntry]) -> Self {
        let mut c = DifficultyCounts::default();
        datamap.iter().for_each(|e| c.add(e.difficulty));
        c
    }
}

/// Difficulty counts of the ids acquired in each round.
pub fn acquisition_by_difficulty(
    round_logs: &[RoundLog],
    datamap: &[DatamapEntry],
) -> Result<Vec<DifficultyCounts>> {
    let lookup: HashMap<u64, Difficulty> = datamap
        .iter()
        .map(|e| (e.example_id, e.difficulty))
        .collect();
    round_logs
        .iter()
        .map(|log| {
            let mut c = DifficultyCounts::default();
            for id in &log.acquired {
                let d = lookup.get(id).ok_or_else(|| {
                    Error::Argument(format!("acquired id {id} is missing from the datamap"))
                })?;
                c.add(*d);
            }
            Ok(c)
        })
        .collect()
}
