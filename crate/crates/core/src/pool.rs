//! Examples, datasets and the labelled / unlabelled pool.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed::{self, SeedPath};
use crate::{Error, Result};

/// A single data point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub id: u64,
    pub source: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tokens: Vec<String>,
    pub label: usize,
}

/// Where a pooled example came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub original_id: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetMeta {
    /// Ids whose label was replaced during synthesis, mapped to the class
    /// they were actually drawn from.
    pub flipped: BTreeMap<u64, usize>,
    /// Populated by [`build_multi_source_pool`]: pooled id to origin.
    pub provenance: BTreeMap<u64, Provenance>,
}

/// An ordered, validated collection of examples.
///
/// Ids are strictly increasing, every example has `feature_dim` features and
/// every label is below `num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    examples: Vec<Example>,
    num_classes: usize,
    feature_dim: usize,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        examples: Vec<Example>,
        num_classes: usize,
    ) -> Result<Self> {
        let feature_dim = examples.first().map_or(0, |e| e.features.len());
        let mut seen = HashSet::with_capacity(examples.len());
        let mut prev: Option<u64> = None;
        for e in &examples {
            if !seen.insert(e.id) {
                return Err(Error::Schema(format!("duplicate id {}", e.id)));
            }
            if let Some(p) = prev {
                if e.id <= p {
                    return Err(Error::Schema(format!(
                        "ids must be strictly increasing: id {} follows id {p}",
                        e.id
                    )));
                }
            }
            prev = Some(e.id);
            if e.features.len() != feature_dim {
                return Err(Error::Schema(format!(
                    "example id {} has {} features, expected {feature_dim}",
                    e.id,
                    e.features.len()
                )));
            }
            if e.label >= num_classes {
                return Err(Error::Schema(format!(
                    "example id {} has label {} but there are {num_classes} classes",
                    e.id, e.label
                )));
            }
            if let Some(j) = e.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::Schema(format!(
                    "example id {} has non-finite feature {j}",
                    e.id
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            examples,
            num_classes,
            feature_dim,
            meta: DatasetMeta::default(),
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.examples.iter().map(|e| e.id)
    }

    pub fn get(&self, id: u64) -> Option<&Example> {
        self.examples
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.examples[i])
    }

    /// Looks up every id, failing on the first unknown one.
    pub fn select<'a>(
        &'a self,
        ids: impl IntoIterator<Item = &'a u64>,
    ) -> Result<Vec<&'a Example>> {
        ids.into_iter()
            .map(|&id| {
                self.get(id)
                    .ok_or_else(|| Error::Argument(format!("unknown id {id} in {}", self.name)))
            })
            .collect()
    }

    /// A new dataset restricted to `keep`, preserving ids and metadata.
    pub fn subset(&self, keep: &BTreeSet<u64>) -> Dataset {
        let examples = self
            .examples
            .iter()
            .filter(|e| keep.contains(&e.id))
            .cloned()
            .collect();
        let meta = DatasetMeta {
            flipped: self
                .meta
                .flipped
                .iter()
                .filter(|(id, _)| keep.contains(id))
                .map(|(k, v)| (*k, *v))
                .collect(),
            provenance: self
                .meta
                .provenance
                .iter()
                .filter(|(id, _)| keep.contains(id))
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
        };
        Dataset {
            name: self.name.clone(),
            examples,
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            meta,
        }
    }

    /// Splits off `round(fraction * len)` uniformly chosen examples.
    /// Returns `(rest, held_out)`.
    pub fn split_holdout(&self, fraction: f64, rng_seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Argument(format!(
                "holdout fraction {fraction} outside [0, 1)"
            )));
        }
        let n_hold = (fraction * self.len() as f64).round() as usize;
        let mut rng = seed::rng(rng_seed);
        let held: BTreeSet<u64> = index::sample(&mut rng, self.len(), n_hold)
            .into_iter()
            .map(|i| self.examples[i].id)
            .collect();
        let rest: BTreeSet<u64> = self.ids().filter(|id| !held.contains(id)).collect();
        Ok((self.subset(&rest), self.subset(&held)))
    }

    pub fn source_map(&self) -> HashMap<u64, String> {
        self.examples
            .iter()
            .map(|e| (e.id, e.source.clone()))
            .collect()
    }

    /// Per-source counts over the given ids.
    pub fn composition<'a>(
        &self,
        ids: impl IntoIterator<Item = &'a u64>,
    ) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for id in ids {
            if let Some(e) = self.get(*id) {
                *out.entry(e.source.clone()).or_insert(0) += 1;
            }
        }
        out
    }

    pub fn sources(&self) -> BTreeSet<String> {
        self.examples.iter().map(|e| e.source.clone()).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            // Example serialization cannot fail: all fields are plain data.
            out.push_str(&serde_json::to_string(e).expect("example serializes"));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let n_tok = self
            .examples
            .iter()
            .map(|e| e.tokens.len())
            .max()
            .unwrap_or(0);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string(), "source".into(), "label".into()];
        header.extend((0..n_tok).map(|i| format!("tok{i}")));
        header.extend((0..self.feature_dim).map(|i| format!("f{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for e in &self.examples {
            let mut row = vec![e.id.to_string(), e.source.clone(), e.label.to_string()];
            row.extend((0..n_tok).map(|i| e.tokens.get(i).cloned().unwrap_or_default()));
            row.extend(e.features.iter().map(|v| format!("{v:?}")));
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()? {
            "jsonl" | "json" => Some(Format::Jsonl),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }
}

/// Reads a dataset file. The class count is inferred as `max(label) + 1`
/// unless `num_classes` is given.
pub fn load_dataset(path: &Path, format: Format, num_classes: Option<usize>) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let examples = match format {
        Format::Jsonl => parse_jsonl(&text)?,
        Format::Csv => parse_csv(&text)?,
    };
    let c = num_classes.unwrap_or_else(|| examples.iter().map(|e| e.label + 1).max().unwrap_or(0));
    Dataset::new(name, examples, c)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: Example = serde_json::from_str(line).map_err(|err| Error::Parse {
            line: i + 1,
            message: err.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

pub fn parse_csv(text: &str) -> Result<Vec<Example>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("csv header lacks column {name:?}")))
    };
    let (id_col, source_col, label_col) = (col("id")?, col("source")?, col("label")?);
    let numbered = |prefix: &str| -> Vec<(usize, usize)> {
        let mut v: Vec<(usize, usize)> = header
            .iter()
            .enumerate()
            .filter_map(|(pos, h)| {
                h.strip_prefix(prefix)?
                    .parse::<usize>()
                    .ok()
                    .map(|k| (k, pos))
            })
            .collect();
        v.sort_unstable();
        v
    };
    let tok_cols = numbered("tok");
    let feat_cols = numbered("f");

    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |pos: usize| rec.get(pos).unwrap_or("");
        let parse_err = |what: &str, v: &str| Error::Parse {
            line,
            message: format!("invalid {what} {v:?}"),
        };
        let id = field(id_col)
            .trim()
            .parse::<u64>()
            .map_err(|_| parse_err("id", field(id_col)))?;
        let label = field(label_col)
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err("label", field(label_col)))?;
        let features = feat_cols
            .iter()
            .map(|&(_, pos)| {
                field(pos)
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err("feature", field(pos)))
            })
            .collect::<Result<Vec<_>>>()?;
        let tokens = tok_cols
            .iter()
            .map(|&(_, pos)| field(pos))
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        out.push(Example {
            id,
            source: field(source_col).to_string(),
            features,
            tokens,
            label,
        });
    }
    Ok(out)
}

/// Parameters of one synthetic Gaussian-mixture source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSourceSpec {
    pub name: String,
    pub n: usize,
    pub class_centroids: Vec<Vec<f64>>,
    /// Standard deviation of the isotropic noise, one per class.
    pub noise_scale: Vec<f64>,
    pub label_flip_rate: f64,
    /// Shrinks centroids towards their common mean: 0 keeps them as given,
    /// values near 1 collapse all classes onto one point.
    #[serde(default)]
    pub centroid_overlap: f64,
}

impl SyntheticSourceSpec {
    pub fn num_classes(&self) -> usize {
        self.class_centroids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.class_centroids.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        if c < 2 {
            return Err(Error::Config(format!(
                "source {:?}: class_centroids needs at least 2 classes, got {c}",
                self.name
            )));
        }
        let d = self.feature_dim();
        if d == 0 || self.class_centroids.iter().any(|v| v.len() != d) {
            return Err(Error::Config(format!(
                "source {:?}: class_centroids must be non-empty vectors of equal length",
                self.name
            )));
        }
        if self.noise_scale.len() != c {
            return Err(Error::Config(format!(
                "source {:?}: noise_scale has {} entries for {c} classes",
                self.name,
                self.noise_scale.len()
            )));
        }
        if self
            .noise_scale
            .iter()
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(Error::Config(format!(
                "source {:?}: noise_scale entries must be > 0",
                self.name
            )));
        }
        if !(0.0..=1.0).contains(&self.label_flip_rate) {
            return Err(Error::Config(format!(
                "source {:?}: label_flip_rate must lie in [0, 1]",
                self.name
            )));
        }
        if !(0.0..1.0).contains(&self.centroid_overlap) {
            return Err(Error::Config(format!(
                "source {:?}: centroid_overlap must lie in [0, 1)",
                self.name
            )));
        }
        Ok(())
    }

    fn effective_centroids(&self) -> Vec<Vec<f64>> {
        let c = self.num_classes() as f64;
        let d = self.feature_dim();
        let mean: Vec<f64> = (0..d)
            .map(|j| self.class_centroids.iter().map(|v| v[j]).sum::<f64>() / c)
            .collect();
        let keep = 1.0 - self.centroid_overlap;
        self.class_centroids
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&mean)
                    .map(|(x, m)| m + keep * (x - m))
                    .collect()
            })
            .collect()
    }
}

/// Quantizes each feature to one decimal and emits `f{dim}={value}`.
pub fn feature_tokens(features: &[f64]) -> Vec<String> {
    features
        .iter()
        .enumerate()
        .map(|(j, v)| format!("f{j}={v:.1}"))
        .collect()
}

/// Draws `spec.n` examples around the class centroids, then replaces the label
/// of exactly `round(label_flip_rate * n)` of them with a different class.
pub fn generate_synthetic_source(spec: &SyntheticSourceSpec, rng_seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let c = spec.num_classes();
    let centroids = spec.effective_centroids();
    let mut rng = seed::rng(rng_seed);

    let mut examples = Vec::with_capacity(spec.n);
    for id in 0..spec.n {
        let class = rng.random_range(0..c);
        let scale = spec.noise_scale[class];
        let features: Vec<f64> = centroids[class]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + scale * z
            })
            .collect();
        let tokens = feature_tokens(&features);
        examples.push(Example {
            id: id as u64,
            source: spec.name.clone(),
            features,
            tokens,
            label: class,
        });
    }

    let n_flip = (spec.label_flip_rate * spec.n as f64).round() as usize;
    let mut flipped = BTreeMap::new();
    for i in index::sample(&mut rng, spec.n, n_flip.min(spec.n)).into_iter() {
        let e = &mut examples[i];
        let original = e.label;
        e.label = (original + 1 + rng.random_range(0..c - 1)) % c;
        flipped.insert(e.id, original);
    }

    let mut ds = Dataset::new(spec.name.clone(), examples, c)?;
    ds.meta.flipped = flipped;
    Ok(ds)
}

/// Down-samples every source to `min(minority size, per_source_cap)` and
/// concatenates them with fresh contiguous ids.
pub fn build_multi_source_pool(
    sources: &[Dataset],
    per_source_cap: usize,
    rng_seed: u64,
) -> Result<Dataset> {
    let first = sources
        .first()
        .ok_or_else(|| Error::Argument("at least one source is required".into()))?;
    for s in sources {
        if s.num_classes != first.num_classes {
            return Err(Error::Schema(format!(
                "source {} has {} classes, {} has {}",
                s.name, s.num_classes, first.name, first.num_classes
            )));
        }
        if !s.is_empty() && !first.is_empty() && s.feature_dim != first.feature_dim {
            return Err(Error::Schema(format!(
                "source {} has feature_dim {}, {} has {}",
                s.name, s.feature_dim, first.name, first.feature_dim
            )));
        }
    }
    let minority = sources.iter().map(Dataset::len).min().unwrap_or(0);
    let take = minority.min(per_source_cap);

    let mut examples = Vec::with_capacity(take * sources.len());
    let mut meta = DatasetMeta::default();
    for s in sources {
        let mut rng = SeedPath::new(rng_seed).label(&s.name).rng();
        let mut picked = index::sample(&mut rng, s.len(), take).into_vec();
        picked.sort_unstable();
        for i in picked {
            let orig = &s.examples[i];
            let id = examples.len() as u64;
            if let Some(&class) = s.meta.flipped.get(&orig.id) {
                meta.flipped.insert(id, class);
            }
            meta.provenance.insert(
                id,
                Provenance {
                    source: s.name.clone(),
                    original_id: orig.id,
                },
            );
            examples.push(Example { id, ..orig.clone() });
        }
    }
    let mut pool = Dataset::new("pool", examples, first.num_classes)?;
    pool.meta = meta;
    Ok(pool)
}

/// Disjoint labelled / unlabelled id sets over one pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolState {
    labelled: BTreeSet<u64>,
    unlabelled: BTreeSet<u64>,
}

impl PoolState {
    /// Labels `seed_size` uniformly chosen pool examples.
    pub fn seed_split(pool: &Dataset, seed_size: usize, rng_seed: u64) -> Result<Self> {
        if seed_size > pool.len() {
            return Err(Error::Argument(format!(
                "seed size {seed_size} exceeds pool size {}",
                pool.len()
            )));
        }
        let mut rng = seed::rng(rng_seed);
        let labelled: BTreeSet<u64> = index::sample(&mut rng, pool.len(), seed_size)
            .into_iter()
            .map(|i| pool.examples[i].id)
            .collect();
        let unlabelled = pool.ids().filter(|id| !labelled.contains(id)).collect();
        Ok(PoolState {
            labelled,
            unlabelled,
        })
    }

    pub fn from_sets(labelled: BTreeSet<u64>, unlabelled: BTreeSet<u64>) -> Result<Self> {
        let overlap: Vec<u64> = labelled.intersection(&unlabelled).copied().collect();
        if !overlap.is_empty() {
            return Err(Error::State { ids: overlap });
        }
        Ok(PoolState {
            labelled,
            unlabelled,
        })
    }

    pub fn labelled(&self) -> &BTreeSet<u64> {
        &self.labelled
    }

    pub fn unlabelled(&self) -> &BTreeSet<u64> {
        &self.unlabelled
    }

    pub fn len(&self) -> usize {
        self.labelled.len() + self.unlabelled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Moves `batch` from the unlabelled to the labelled set. Nothing changes
    /// if any id is not currently unlabelled.
    pub fn transfer(&mut self, batch: &[u64]) -> Result<()> {
        let mut set = BTreeSet::new();
        let mut bad: Vec<u64> = Vec::new();
        for &id in batch {
            if !set.insert(id) || !self.unlabelled.contains(&id) {
                bad.push(id);
            }
        }
        if !bad.is_empty() {
            bad.sort_unstable();
            bad.dedup();
            return Err(Error::State { ids: bad });
        }
        for id in set {
            self.unlabelled.remove(&id);
            self.labelled.insert(id);
        }
        Ok(())
    }
}

/// Human-readable summary of a dataset's per-source, per-class counts.
pub fn describe<E: Borrow<Example>>(examples: &[E], num_classes: usize) -> String {
    let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for e in examples {
        let e = e.borrow();
        counts
            .entry(e.source.as_str())
            .or_insert_with(|| vec![0; num_classes])[e.label] += 1;
    }
    let mut s = String::new();
    for (src, c) in counts {
        let _ = writeln!(s, "{src}: {c:?}");
    }
    s
}
