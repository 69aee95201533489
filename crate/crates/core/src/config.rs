//! Experiment configuration, read from TOML.
//!
//! Every field of [`ExperimentConfig`] has an explicit key; unknown keys are
//! rejected. A minimal synthetic config:
//!
//! ```toml
//! seed_size = 200
//! k = 200
//! rounds = 5
//! strategies = ["random", "mcme"]
//! seeds = [1, 2, 3]
//!
//! [[sources]]
//! name = "a"
//! n = 2000
//! class_centroids = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]]
//! noise_scale = [1.0, 1.0, 1.0]
//!
//! [[test_sets]]
//! name = "clean"
//! n_per_source = 500
//! label_flip_rate = 0.0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionConfig, StrategyKind};
use crate::cartography::{Combo, DifficultyThresholds};
use crate::classifier::{Activation, ClassifierConfig, TrainConfig};
use crate::pool::{Format, SyntheticSourceSpec};
use crate::{Error, Result};

/// Network shape without the data-dependent input and output widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub hidden_dims: Vec<usize>,
    pub dropout_rate: f64,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        let c = ClassifierConfig::new(1, 2);
        Architecture {
            hidden_dims: c.hidden_dims,
            dropout_rate: c.dropout_rate,
            activation: c.activation,
        }
    }
}

impl Architecture {
    pub fn to_config(&self, input_dim: usize, num_classes: usize) -> ClassifierConfig {
        ClassifierConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            num_classes,
            dropout_rate: self.dropout_rate,
            activation: self.activation,
        }
    }
}

/// A pool source: either a dataset file (`path`) or a synthetic Gaussian
/// mixture (`n`, `class_centroids`, `noise_scale`, ...).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_centroids: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_flip_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid_overlap: Option<f64>,
}

impl SourceConfig {
    pub fn is_synthetic(&self) -> bool {
        self.path.is_none()
    }

    /// The synthetic spec, with errors naming the missing key as `key_path.field`.
    pub fn synthetic_spec(&self, key_path: &str) -> Result<SyntheticSourceSpec> {
        let missing = |field: &str| {
            Error::Config(format!(
                "{key_path}.{field} is required for a synthetic source"
            ))
        };
        let spec = SyntheticSourceSpec {
            name: self.name.clone(),
            n: self.n.ok_or_else(|| missing("n"))?,
            class_centroids: self
                .class_centroids
                .clone()
                .ok_or_else(|| missing("class_centroids"))?,
            noise_scale: self
                .noise_scale
                .clone()
                .ok_or_else(|| missing("noise_scale"))?,
            label_flip_rate: self.label_flip_rate.unwrap_or(0.0),
            centroid_overlap: self.centroid_overlap.unwrap_or(0.0),
        };
        spec.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{key_path}: {m}")),
            other => other,
        })?;
        Ok(spec)
    }

    pub fn file_format(&self, path: &Path) -> Result<Format> {
        self.format
            .or_else(|| Format::from_path(path))
            .ok_or_else(|| {
                Error::Config(format!(
                    "cannot infer format of {}; set `format`",
                    path.display()
                ))
            })
    }
}

/// A test set: a file (`path`) or fresh draws from the synthetic sources
/// (`n_per_source`, optionally restricted to `sources` and with its own
/// `label_flip_rate`; by default each source's own rate is used).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSetConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_per_source: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_flip_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultySplitConfig {
    #[serde(default = "Combo::standard")]
    pub combos: Vec<Combo>,
    /// Training-set size per combo.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    /// Seeds data synthesis, pooling, validation holdout and the cartography model.
    pub data_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    /// Upper bound on examples per source; the minority source size applies first.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_source_cap: Option<usize>,
    /// Share of each source held out for validation before pooling.
    pub validation_fraction: f64,
    pub seed_size: usize,
    pub k: usize,
    pub rounds: usize,
    pub strategies: Vec<StrategyKind>,
    pub seeds: Vec<u64>,
    /// Maximum number of runs executed concurrently.
    pub parallelism: usize,
    /// Write per-round acquisition scores under `scores/`.
    pub dump_scores: bool,
    pub acquisition: AcquisitionConfig,
    pub classifier: Architecture,
    pub train: TrainConfig,
    /// Training schedule of the cartography model. It has no validation set,
    /// so it always runs `max_epochs` epochs.
    pub cartography: TrainConfig,
    pub thresholds: DifficultyThresholds,
    /// Fraction of each source removed by the hard-to-learn ablation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub difficulty_split: Option<DifficultySplitConfig>,
    /// Test set evaluated per difficulty class with its own cartography model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stratify_test_set: Option<String>,
    pub sources: Vec<SourceConfig>,
    pub test_sets: Vec<TestSetConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            data_seed: 0,
            num_classes: None,
            per_source_cap: None,
            validation_fraction: 0.1,
            seed_size: 500,
            k: 500,
            rounds: 7,
            strategies: StrategyKind::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            parallelism: 1,
            dump_scores: false,
            acquisition: AcquisitionConfig::default(),
            classifier: Architecture::default(),
            train: TrainConfig::default(),
            cartography: TrainConfig {
                max_epochs: 6,
                ..TrainConfig::default()
            },
            thresholds: DifficultyThresholds::default(),
            ablation: None,
            difficulty_split: None,
            stratify_test_set: None,
            sources: Vec::new(),
            test_sets: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| e.context(format!("config {}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.strategies.is_empty() {
            return bad("strategies must not be empty".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)".into());
        }
        if self.sources.is_empty() {
            return bad("at least one [[sources]] entry is required".into());
        }
        if self.acquisition.mc_samples == 0 {
            return bad("acquisition.mc_samples must be at least 1".into());
        }
        if let Some(f) = self.ablation {
            if !(0.0..1.0).contains(&f) {
                return bad("ablation must lie in [0, 1)".into());
            }
        }
        if let Some(split) = &self.difficulty_split {
            for c in &split.combos {
                if split.n % c.len() != 0 {
                    return bad(format!(
                        "difficulty_split.n = {} is not divisible by the size of combo {c}",
                        split.n
                    ));
                }
            }
        }
        self.thresholds.validate()?;
        self.train.validate().map_err(|e| e.context("train"))?;
        self.cartography
            .validate()
            .map_err(|e| e.context("cartography"))?;
        self.classifier
            .to_config(1, 2)
            .validate()
            .map_err(|e| e.context("classifier"))?;

        let mut names = std::collections::BTreeSet::new();
        for (i, s) in self.sources.iter().enumerate() {
            let key = format!("sources[{i}]");
            if !names.insert(s.name.as_str()) {
                return bad(format!("{key}.name {:?} is used twice", s.name));
            }
            if s.is_synthetic() {
                s.synthetic_spec(&key)?;
            }
        }
        let mut test_names = std::collections::BTreeSet::new();
        for (i, t) in self.test_sets.iter().enumerate() {
            let key = format!("test_sets[{i}]");
            if !test_names.insert(t.name.as_str()) {
                return bad(format!("{key}.name {:?} is used twice", t.name));
            }
            if t.path.is_some() == t.n_per_source.is_some() {
                return bad(format!(
                    "{key} needs exactly one of `path` or `n_per_source`"
                ));
            }
            if let Some(r) = t.label_flip_rate {
                if !(0.0..=1.0).contains(&r) {
                    return bad(format!("{key}.label_flip_rate must lie in [0, 1]"));
                }
            }
            for s in t.sources.iter().flatten() {
                if !self
                    .sources
                    .iter()
                    .any(|src| &src.name == s && src.is_synthetic())
                {
                    return bad(format!(
                        "{key}.sources names {s:?}, which is not a synthetic source"
                    ));
                }
            }
        }
        if let Some(t) = &self.stratify_test_set {
            if !test_names.contains(t.as_str()) {
                return bad(format!(
                    "stratify_test_set {t:?} is not a configured test set"
                ));
            }
        }
        Ok(())
    }
}
