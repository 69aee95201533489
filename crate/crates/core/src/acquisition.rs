//! Acquisition strategies: score the unlabelled pool and pick `k` examples.
//!
//! Entropies are in nats. Score-based strategies take the `k` highest scores,
//! breaking ties by ascending example id.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    self, Activation, Classifier, ClassifierConfig, Matrix, ProbMatrix, TrainConfig,
};
use crate::pool::{Dataset, Example, PoolState};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionScore {
    pub example_id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StrategyKind {
    Random,
    Mcme,
    Bald,
    Dal,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Random,
        StrategyKind::Mcme,
        StrategyKind::Bald,
        StrategyKind::Dal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Mcme => "mcme",
            StrategyKind::Bald => "bald",
            StrategyKind::Dal => "dal",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy {s:?}; valid strategies are random, mcme, bald, dal"
                ))
            })
    }
}

impl TryFrom<String> for StrategyKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StrategyKind> for String {
    fn from(k: StrategyKind) -> String {
        k.name().to_string()
    }
}

/// Discriminator used by DAL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DalConfig {
    /// Width of a single hidden layer; `None` means logistic regression.
    pub hidden: Option<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for DalConfig {
    fn default() -> Self {
        DalConfig {
            hidden: None,
            epochs: 200,
            learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    /// Monte-Carlo dropout passes for MCME and BALD.
    pub mc_samples: usize,
    pub dal: DalConfig,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            mc_samples: 4,
            dal: DalConfig::default(),
        }
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// `-sum p ln p` with `0 ln 0 = 0`.
pub fn predictive_entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|x| *x < 0.0 || !x.is_finite()) {
        return Err(Error::Argument(
            "probability vector has a negative or non-finite entry".into(),
        ));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::Argument(format!("probability vector sums to {s}")));
    }
    Ok(entropy(p))
}

fn check_samples(mc: &[ProbMatrix], ids: &[u64]) -> Result<()> {
    let first = mc
        .first()
        .ok_or_else(|| Error::Argument("no Monte-Carlo samples".into()))?;
    if mc
        .iter()
        .any(|m| m.num_rows() != first.num_rows() || m.num_classes() != first.num_classes())
    {
        return Err(Error::Argument(
            "Monte-Carlo samples differ in shape".into(),
        ));
    }
    if ids.len() != first.num_rows() {
        return Err(Error::Argument(format!(
            "{} ids for {} rows",
            ids.len(),
            first.num_rows()
        )));
    }
    Ok(())
}

fn mean_row(mc: &[ProbMatrix], i: usize) -> Vec<f64> {
    let mut mean = vec![0.0; mc[0].num_classes()];
    for m in mc {
        for (a, p) in mean.iter_mut().zip(m.row(i)) {
            *a += p;
        }
    }
    let t = mc.len() as f64;
    mean.iter_mut().for_each(|a| *a /= t);
    mean
}

/// Entropy of the mean predictive distribution over the MC samples.
pub fn score_mcme(mc: &[ProbMatrix], ids: &[u64]) -> Result<Vec<AcquisitionScore>> {
    check_samples(mc, ids)?;
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, &id)| AcquisitionScore {
            example_id: id,
            score: entropy(&mean_row(mc, i)),
        })
        .collect())
}

/// Mutual information between prediction and dropout mask:
/// `H(mean_t p_t) - mean_t H(p_t)`, clamped at 0.
pub fn score_bald(mc: &[ProbMatrix], ids: &[u64]) -> Result<Vec<AcquisitionScore>> {
    if mc.len() < 2 {
        return Err(Error::Argument(format!(
            "BALD needs at least 2 Monte-Carlo samples, got {}",
            mc.len()
        )));
    }
    check_samples(mc, ids)?;
    let t = mc.len() as f64;
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let expected = mc.iter().map(|m| entropy(m.row(i))).sum::<f64>() / t;
            let score = (entropy(&mean_row(mc, i)) - expected).max(0.0);
            AcquisitionScore {
                example_id: id,
                score,
            }
        })
        .collect())
}

/// Trains a labelled-vs-unlabelled discriminator on the embeddings and scores
/// every unlabelled row by its probability of being unlabelled.
pub fn score_dal(
    labelled: &Matrix,
    unlabelled: &Matrix,
    unlabelled_ids: &[u64],
    cfg: &DalConfig,
    rng_seed: u64,
) -> Result<Vec<AcquisitionScore>> {
    if labelled.num_rows() == 0 || unlabelled.num_rows() == 0 {
        return Err(Error::Argument(
            "DAL needs non-empty labelled and unlabelled embeddings".into(),
        ));
    }
    if labelled.num_cols() != unlabelled.num_cols() {
        return Err(Error::Argument(format!(
            "embedding widths differ: {} vs {}",
            labelled.num_cols(),
            unlabelled.num_cols()
        )));
    }
    if unlabelled_ids.len() != unlabelled.num_rows() {
        return Err(Error::Argument(
            "one id per unlabelled embedding is required".into(),
        ));
    }

    let width = labelled.num_cols();
    let rows: Vec<&[f64]> = labelled.rows().chain(unlabelled.rows()).collect();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..width)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let scale: Vec<f64> = (0..width)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 {
                1.0 / var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let standardize = |r: &[f64]| -> Vec<f64> {
        r.iter()
            .enumerate()
            .map(|(j, v)| (v - mean[j]) * scale[j])
            .collect()
    };
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| standardize(r)).collect();
    let targets: Vec<usize> = (0..rows.len())
        .map(|i| usize::from(i >= labelled.num_rows()))
        .collect();
    let offset = labelled.num_rows();

    let probs: Vec<f64> = match cfg.hidden {
        None => {
            let (w, b) = fit_logistic(&xs, &targets, cfg.epochs, cfg.learning_rate)?;
            xs[offset..]
                .iter()
                .map(|x| sigmoid(b + dot(&w, x)))
                .collect()
        }
        Some(h) => {
            let examples: Vec<Example> = xs
                .into_iter()
                .zip(&targets)
                .enumerate()
                .map(|(i, (features, &label))| Example {
                    id: i as u64,
                    source: String::new(),
                    features,
                    tokens: vec![],
                    label,
                })
                .collect();
            let config = ClassifierConfig {
                input_dim: width,
                hidden_dims: vec![h],
                num_classes: 2,
                dropout_rate: 0.0,
                activation: Activation::Relu,
            };
            let tcfg = TrainConfig {
                learning_rate: cfg.learning_rate,
                batch_size: examples.len(),
                max_epochs: cfg.epochs,
                patience: cfg.epochs,
                eval_interval: 1.0,
                rng_seed,
            };
            let model = classifier::fit(&config, &examples, &[], &tcfg)?;
            let p = model.predict_proba(&examples[offset..])?;
            p.rows().map(|r| r[1]).collect()
        }
    };
    Ok(unlabelled_ids
        .iter()
        .zip(probs)
        .map(|(&id, score)| AcquisitionScore {
            example_id: id,
            score,
        })
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary logistic regression, full-batch gradient descent from zero weights.
fn fit_logistic(xs: &[Vec<f64>], ys: &[usize], epochs: usize, lr: f64) -> Result<(Vec<f64>, f64)> {
    let d = xs.first().map_or(0, Vec::len);
    let n = xs.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    for epoch in 0..epochs {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let r = sigmoid(b + dot(&w, x)) - y as f64;
            gb += r;
            for (g, v) in gw.iter_mut().zip(x) {
                *g += r * v;
            }
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g / n;
        }
        b -= lr * gb / n;
        if !b.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: epoch });
        }
    }
    Ok((w, b))
}

/// Ids of the `k` highest scores; ties go to the lower id.
pub fn top_k(scores: &[AcquisitionScore], k: usize) -> Vec<u64> {
    let mut ranked: Vec<&AcquisitionScore> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.example_id.cmp(&b.example_id))
    });
    ranked.into_iter().take(k).map(|s| s.example_id).collect()
}

/// Outcome of one acquisition step.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected ids in ascending order.
    pub ids: Vec<u64>,
    /// Scores of every unlabelled example; empty for random acquisition.
    pub scores: Vec<AcquisitionScore>,
}

pub fn select_batch(
    strategy: StrategyKind,
    state: &PoolState,
    pool: &Dataset,
    model: &Classifier,
    k: usize,
    rng_seed: u64,
    cfg: &AcquisitionConfig,
) -> Result<Selection> {
    let unlabelled: Vec<u64> = state.unlabelled().iter().copied().collect();
    if k > unlabelled.len() {
        return Err(Error::Argument(format!(
            "cannot acquire {k} examples from {} unlabelled",
            unlabelled.len()
        )));
    }
    if k == unlabelled.len() {
        return Ok(Selection {
            ids: unlabelled,
            scores: vec![],
        });
    }

    let scores = match strategy {
        StrategyKind::Random => {
            let mut rng = seed::rng(rng_seed);
            let mut ids: Vec<u64> = index::sample(&mut rng, unlabelled.len(), k)
                .into_iter()
                .map(|i| unlabelled[i])
                .collect();
            ids.sort_unstable();
            return Ok(Selection {
                ids,
                scores: vec![],
            });
        }
        StrategyKind::Mcme | StrategyKind::Bald => {
            let xs = pool.select(&unlabelled)?;
            let mc = model.mc_predict_proba(&xs, cfg.mc_samples, rng_seed)?;
            if strategy == StrategyKind::Mcme {
                score_mcme(&mc, &unlabelled)?
            } else {
                score_bald(&mc, &unlabelled)?
            }
        }
        StrategyKind::Dal => {
            let lab = pool.select(state.labelled())?;
            let unl = pool.select(&unlabelled)?;
            score_dal(
                &model.embed(&lab)?,
                &model.embed(&unl)?,
                &unlabelled,
                &cfg.dal,
                rng_seed,
            )?
        }
    };
    let mut ids = top_k(&scores, k);
    ids.sort_unstable();
    Ok(Selection { ids, scores })
}
