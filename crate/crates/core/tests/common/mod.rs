//! Brute-force reference implementations and fixtures shared by the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use cartal::cartography::Difficulty;
use cartal::classifier::{Activation, Classifier, ClassifierConfig};
use cartal::pool::Example;
use cartal::seed::{rng, Rng};
use rand::Rng as _;

// ---- oracles ------------------------------------------------------------

pub fn oracle_entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    h
}

/// `samples[t][c]` for one example.
pub fn oracle_mcme(samples: &[Vec<f64>]) -> f64 {
    let c = samples[0].len();
    let mean: Vec<f64> = (0..c)
        .map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / samples.len() as f64)
        .collect();
    oracle_entropy(&mean)
}

/// Mutual information as the mean KL divergence of each sample from the mean.
pub fn oracle_bald(samples: &[Vec<f64>]) -> f64 {
    let c = samples[0].len();
    let t = samples.len() as f64;
    let mean: Vec<f64> = (0..c)
        .map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / t)
        .collect();
    let mut kl = 0.0;
    for s in samples {
        for j in 0..c {
            if s[j] > 0.0 {
                kl += s[j] * (s[j] / mean[j]).ln();
            }
        }
    }
    (kl / t).max(0.0)
}

pub fn oracle_jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union: BTreeSet<&String> = a.iter().chain(b.iter()).collect();
    if union.is_empty() {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union.len() as f64
}

/// `count_s * N / (k * n_s)` for every source present in the pool.
pub fn oracle_factor(
    batch_sources: &[&str],
    pool: &BTreeMap<String, usize>,
) -> BTreeMap<String, f64> {
    let total: usize = pool.values().sum();
    let k = batch_sources.len();
    pool.iter()
        .filter(|(_, &n)| n > 0)
        .map(|(s, &n)| {
            let got = batch_sources.iter().filter(|b| **b == s).count();
            (s.clone(), (got * total) as f64 / (k * n) as f64)
        })
        .collect()
}

pub struct OracleEntry {
    pub mean: f64,
    pub std: f64,
    pub correctness: f64,
    pub difficulty: Difficulty,
}

/// Welford mean and population standard deviation, default bands.
pub fn oracle_datamap(confidences: &[f64], correct: &[bool]) -> OracleEntry {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in confidences.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let n = confidences.len() as f64;
    let difficulty = if mean <= 0.25 {
        Difficulty::Impossible
    } else if mean <= 0.5 {
        Difficulty::Hard
    } else if mean <= 0.75 {
        Difficulty::Medium
    } else {
        Difficulty::Easy
    };
    OracleEntry {
        mean,
        std: (m2 / n).sqrt(),
        correctness: correct.iter().filter(|&&c| c).count() as f64 / n,
        difficulty,
    }
}

// ---- random inputs ------------------------------------------------------

/// A probability vector that is sometimes one-hot or has exact zeros.
pub fn random_probs(rng: &mut Rng, c: usize) -> Vec<f64> {
    match rng.random_range(0..10) {
        0 => {
            let mut p = vec![0.0; c];
            p[rng.random_range(0..c)] = 1.0;
            p
        }
        1 => vec![1.0 / c as f64; c],
        r => {
            let mut p: Vec<f64> = (0..c)
                .map(|_| {
                    if r == 2 && rng.random_bool(0.3) {
                        0.0
                    } else {
                        -rng.random::<f64>().max(1e-300).ln()
                    }
                })
                .collect();
            if p.iter().all(|x| *x == 0.0) {
                p[0] = 1.0;
            }
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= s);
            p
        }
    }
}

// ---- gradient check -----------------------------------------------------

/// Largest relative error between analytic and central-difference gradients
/// on a random small network and batch.
pub fn gradient_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = r.random_range(1..=5);
    let depth = r.random_range(1..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| r.random_range(1..=8)).collect();
    let c = r.random_range(2..=4);
    let activation = if seed.is_multiple_of(2) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    let config = ClassifierConfig {
        input_dim: d,
        hidden_dims: hidden,
        num_classes: c,
        dropout_rate: 0.2,
        activation,
    };
    let mut model = Classifier::init(&config, &mut r).expect("valid config");
    // Zero initial biases put ReLU pre-activations exactly on the kink, where
    // finite differences are meaningless; probe a nearby generic point instead.
    let jittered: Vec<f64> = model
        .params()
        .iter()
        .map(|w| w + r.random_range(-0.1..0.1))
        .collect();
    model.set_params(&jittered).expect("same length");
    let batch: Vec<Example> = (0..6)
        .map(|i| Example {
            id: i,
            source: "g".into(),
            features: (0..d).map(|_| r.random_range(-2.0..2.0)).collect(),
            tokens: vec![],
            label: r.random_range(0..c),
        })
        .collect();
    let (_, analytic) = model.loss_and_gradient(&batch).expect("gradient");
    let params = model.params();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] = params[i] + h;
        probe.set_params(&p).unwrap();
        let up = probe.loss(&batch).unwrap();
        p[i] = params[i] - h;
        probe.set_params(&p).unwrap();
        let down = probe.loss(&batch).unwrap();
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

// ---- fixtures -----------------------------------------------------------

/// A fast three-source config: two clean sources and one with flipped labels.
pub fn small_config_toml(
    n: usize,
    seed_size: usize,
    k: usize,
    rounds: usize,
    strategies: &[&str],
    seeds: &[u64],
) -> String {
    let strategies: Vec<String> = strategies.iter().map(|s| format!("{s:?}")).collect();
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let mut s = format!(
        r#"name = "small"
data_seed = 3
seed_size = {seed_size}
k = {k}
rounds = {rounds}
strategies = [{}]
seeds = [{}]

[classifier]
hidden_dims = [16]

[train]
max_epochs = 8
patience = 3

[cartography]
max_epochs = 3

"#,
        strategies.join(", "),
        seeds.join(", ")
    );
    for (i, (name, flip)) in [("a", 0.0), ("b", 0.0), ("c", 0.3)].iter().enumerate() {
        let mut rows = Vec::new();
        for class in 0..3 {
            let mut v = [0.0; 6];
            v[class] = 4.0;
            v[3 + i] = 2.0;
            rows.push(format!(
                "[{}]",
                v.iter()
                    .map(|x| format!("{x:.1}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        s.push_str(&format!(
            "[[sources]]\nname = \"{name}\"\nn = {n}\nclass_centroids = [{}]\nnoise_scale = [1.0, 1.0, 1.0]\nlabel_flip_rate = {flip}\n\n",
            rows.join(", ")
        ));
    }
    s.push_str("[[test_sets]]\nname = \"clean\"\nn_per_source = 50\nlabel_flip_rate = 0.0\n");
    s
}

pub fn write(path: &Path, text: &str) {
    std::fs::write(path, text).expect("write fixture");
}

// ---- degenerate inputs --------------------------------------------------

pub type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn blob_examples(n: usize, d: usize, c: usize, seed: u64) -> Vec<Example> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let label = i % c;
            let features = (0..d)
                .map(|j| if j % c == label { 3.0 } else { 0.0 } + r.random_range(-1.0..1.0))
                .collect();
            Example {
                id: i as u64 * 3 + 1,
                source: ["p", "q"][i % 2].into(),
                features,
                tokens: vec![],
                label,
            }
        })
        .collect()
}

pub fn check_empty_files(dir: &Path) -> Check {
    use cartal::pool::{load_dataset, Format};
    for (file, format) in [("empty.jsonl", Format::Jsonl), ("empty.csv", Format::Csv)] {
        let path = dir.join(file);
        write(&path, "");
        let ds = load_dataset(&path, format, None).map_err(|e| format!("{file}: {e}"))?;
        ensure(
            ds.is_empty(),
            format!("{file}: expected 0 examples, got {}", ds.len()),
        )?;
    }
    Ok(())
}

pub fn check_exhaustive_k() -> Check {
    use cartal::acquisition::{select_batch, AcquisitionConfig, StrategyKind};
    use cartal::pool::{Dataset, PoolState};
    let ds = Dataset::new("blobs", blob_examples(60, 4, 3, 5), 3).map_err(|e| e.to_string())?;
    let state = PoolState::seed_split(&ds, 10, 1).map_err(|e| e.to_string())?;
    let config = ClassifierConfig {
        input_dim: 4,
        hidden_dims: vec![6],
        num_classes: 3,
        dropout_rate: 0.3,
        activation: Activation::Relu,
    };
    let model = Classifier::init(&config, &mut rng(2)).map_err(|e| e.to_string())?;
    let all: Vec<u64> = state.unlabelled().iter().copied().collect();
    let cfg = AcquisitionConfig::default();
    for s in StrategyKind::ALL {
        let sel = select_batch(s, &state, &ds, &model, all.len(), 9, &cfg)
            .map_err(|e| format!("{s}: {e}"))?;
        ensure(
            sel.ids == all,
            format!("{s}: k = |unlabelled| did not return the whole unlabelled set"),
        )?;
        match select_batch(s, &state, &ds, &model, all.len() + 1, 9, &cfg) {
            Err(cartal::Error::Argument(_)) => {}
            other => {
                return Err(format!(
                    "{s}: k > |unlabelled| gave {other:?}, expected an argument error"
                ))
            }
        }
    }
    Ok(())
}

pub fn check_zero_fraction_ablation() -> Check {
    use cartal::cartography::compute_datamap;
    use cartal::cartography::DynamicsTrace;
    use cartal::cartography::{ablate_hard_to_learn, DifficultyThresholds};
    use std::collections::HashMap;
    let mut r = rng(4);
    let traces: Vec<DynamicsTrace> = (0..30u64)
        .map(|id| DynamicsTrace {
            example_id: id,
            confidences: (0..4).map(|_| r.random::<f64>()).collect(),
            correct: vec![true; 4],
        })
        .collect();
    let map =
        compute_datamap(&traces, &DifficultyThresholds::default()).map_err(|e| e.to_string())?;
    let sources: HashMap<u64, String> = (0..30u64).map(|id| (id, format!("s{}", id % 3))).collect();
    let kept = ablate_hard_to_learn(&map, &sources, 0.0).map_err(|e| e.to_string())?;
    ensure(
        kept.len() == 30,
        format!("fraction 0 retained {} of 30", kept.len()),
    )?;
    for bad in [1.0, -0.1, f64::NAN] {
        match ablate_hard_to_learn(&map, &sources, bad) {
            Err(cartal::Error::Argument(_)) => {}
            other => {
                return Err(format!(
                    "fraction {bad} gave {other:?}, expected an argument error"
                ))
            }
        }
    }
    Ok(())
}

/// Fraction-0 ablation through the experiment runner must reproduce the plain suite.
pub fn check_zero_fraction_suite() -> Check {
    use cartal::config::ExperimentConfig;
    use cartal::experiment::{prepare, run_ablated_suite, run_suite};
    let cfg = ExperimentConfig::from_toml_str(&small_config_toml(
        60,
        20,
        10,
        2,
        &["random", "mcme"],
        &[1],
    ))
    .map_err(|e| e.to_string())?;
    let prep = prepare(&cfg).map_err(|e| e.to_string())?;
    let plain = run_suite(&prep).map_err(|e| e.to_string())?;
    let ablated = run_ablated_suite(&prep, 0.0).map_err(|e| e.to_string())?;
    ensure(
        ablated.retained.len() == prep.pool.len(),
        "fraction 0 dropped pool examples",
    )?;
    for (a, b) in plain.runs.iter().zip(&ablated.suite.runs) {
        let (a, b) = (
            a.outcome.as_ref().map_err(Clone::clone)?,
            b.outcome.as_ref().map_err(Clone::clone)?,
        );
        ensure(
            a.final_labelled == b.final_labelled,
            format!("{}: labelled sets differ", a.strategy),
        )?;
        ensure(
            a.test_accuracy == b.test_accuracy,
            format!("{}: test accuracies differ", a.strategy),
        )?;
    }
    Ok(())
}

pub fn check_dropout_zero_mc() -> Check {
    let config = ClassifierConfig {
        input_dim: 4,
        hidden_dims: vec![5, 3],
        num_classes: 3,
        dropout_rate: 0.0,
        activation: Activation::Tanh,
    };
    let model = Classifier::init(&config, &mut rng(8)).map_err(|e| e.to_string())?;
    let xs = blob_examples(12, 4, 3, 6);
    let det = model.predict_proba(&xs).map_err(|e| e.to_string())?;
    let mc = model
        .mc_predict_proba(&xs, 5, 3)
        .map_err(|e| e.to_string())?;
    ensure(mc.len() == 5, "wrong number of samples")?;
    ensure(
        mc.iter().all(|m| *m == det),
        "dropout 0 samples differ from deterministic output",
    )?;
    match model.mc_predict_proba(&xs, 0, 3) {
        Err(cartal::Error::Argument(_)) => Ok(()),
        other => Err(format!("T = 0 gave {other:?}, expected an argument error")),
    }
}

pub fn check_single_class_training() -> Check {
    use cartal::classifier::{fit, TrainConfig};
    let config = ClassifierConfig {
        input_dim: 4,
        hidden_dims: vec![8],
        num_classes: 3,
        dropout_rate: 0.3,
        activation: Activation::Relu,
    };
    let mut xs = blob_examples(40, 4, 3, 7);
    xs.iter_mut().for_each(|e| e.label = 2);
    let tcfg = TrainConfig {
        max_epochs: 10,
        ..TrainConfig::default()
    };
    let model = fit(&config, &xs, &[] as &[Example], &tcfg).map_err(|e| e.to_string())?;
    let probe = blob_examples(30, 4, 3, 99);
    let pred = model.predict(&probe).map_err(|e| e.to_string())?;
    ensure(
        pred.iter().all(|&p| p == 2),
        "single-class model predicted another label",
    )?;
    let acc = model.accuracy(&xs).map_err(|e| e.to_string())?;
    ensure(acc == 1.0, format!("train accuracy {acc}"))?;
    match fit(&config, &[] as &[Example], &[] as &[Example], &tcfg) {
        Err(cartal::Error::Argument(_)) => Ok(()),
        other => Err(format!(
            "empty train set gave {:?}, expected an argument error",
            other.map(|_| ())
        )),
    }
}
