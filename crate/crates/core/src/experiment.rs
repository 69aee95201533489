//! Multi-round, multi-seed active learning runs and their CSV artifacts.
//!
//! Seeds are derived per purpose from the user-facing seeds (see [`crate::seed`]):
//!
//! - the seed labelled set depends only on the run seed, so every strategy
//!   starts from the same labelled examples for a given seed;
//! - model fits and acquisition draw from `hash(seed, strategy, purpose, round)`;
//! - data synthesis, pooling and the cartography model use `data_seed`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::acquisition::{select_batch, AcquisitionScore, StrategyKind};
use crate::cartography::{
    ablate_hard_to_learn, build_difficulty_split, run_cartography, Cartography, Combo, DatamapEntry,
};
use crate::classifier::{self, Classifier, ClassifierConfig};
use crate::config::ExperimentConfig;
use crate::metrics::{
    acquisition_factor, class_distribution, input_diversity, output_uncertainty,
    stratified_accuracy, token_set, RoundMetrics, StratifiedResult,
};
use crate::pool::{
    self, build_multi_source_pool, generate_synthetic_source, Dataset, Example, PoolState,
};
use crate::seed::SeedPath;
use crate::{Error, Result};

/// One acquisition round of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundLog {
    pub strategy: String,
    pub seed: u64,
    pub round: usize,
    /// Labelled-set size the round's model was trained on.
    pub labelled_size: usize,
    /// Ids acquired at the end of the round, ascending.
    pub acquired: Vec<u64>,
    pub per_source: BTreeMap<String, usize>,
    pub metrics: RoundMetrics,
    pub val_accuracy: Option<f64>,
}

/// End-of-run profile of everything acquired after the seed set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Profile {
    pub input_diversity: f64,
    pub output_uncertainty: f64,
    pub class_distribution: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub seed_labelled: BTreeSet<u64>,
    pub rounds: Vec<RoundLog>,
    pub final_labelled: BTreeSet<u64>,
    /// Refit on the final labelled set after the last transfer.
    pub final_model: Classifier,
    pub final_val_accuracy: Option<f64>,
    pub test_accuracy: BTreeMap<String, f64>,
    pub stratified: Option<StratifiedResult>,
    pub profile: Profile,
    /// Per-round scores, kept only when `dump_scores` is set.
    pub scores: Vec<Vec<AcquisitionScore>>,
}

/// Everything a run needs that does not depend on strategy or seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub pool: Dataset,
    pub validation: Dataset,
    pub test_sets: Vec<Dataset>,
    pub model_config: ClassifierConfig,
    /// Full-pool cartography; its model is the reference for output uncertainty.
    pub cartography: Cartography,
    pub test_cartography: Option<Cartography>,
}

impl Prepared {
    /// Same setup over a restricted pool (ids are preserved).
    pub fn with_pool(&self, pool: Dataset) -> Prepared {
        Prepared {
            pool,
            ..self.clone()
        }
    }

    pub fn test_set(&self, name: &str) -> Option<&Dataset> {
        self.test_sets.iter().find(|t| t.name == name)
    }
}

fn load_sources(config: &ExperimentConfig) -> Result<Vec<Dataset>> {
    config
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| match &s.path {
            Some(path) => {
                let mut ds = pool::load_dataset(path, s.file_format(path)?, config.num_classes)
                    .map_err(|e| e.context(format!("sources[{i}]")))?;
                ds.name = s.name.clone();
                Ok(ds)
            }
            None => {
                let spec = s.synthetic_spec(&format!("sources[{i}]"))?;
                generate_synthetic_source(
                    &spec,
                    SeedPath::new(config.data_seed)
                        .label("source")
                        .label(&s.name)
                        .finish(),
                )
            }
        })
        .collect()
}

fn build_test_sets(config: &ExperimentConfig) -> Result<Vec<Dataset>> {
    let mut out = Vec::new();
    for (i, t) in config.test_sets.iter().enumerate() {
        let key = format!("test_sets[{i}]");
        let mut ds = if let Some(path) = &t.path {
            let format = t
                .format
                .or_else(|| pool::Format::from_path(path))
                .ok_or_else(|| {
                    Error::Config(format!("{key}: cannot infer format of {}", path.display()))
                })?;
            pool::load_dataset(path, format, config.num_classes)
                .map_err(|e| e.context(key.clone()))?
        } else {
            let n = t.n_per_source.expect("validated");
            let mut parts = Vec::new();
            for (j, s) in config.sources.iter().enumerate() {
                if !s.is_synthetic()
                    || t.sources
                        .as_ref()
                        .is_some_and(|names| !names.contains(&s.name))
                {
                    continue;
                }
                let mut spec = s.synthetic_spec(&format!("sources[{j}]"))?;
                spec.n = n;
                if let Some(r) = t.label_flip_rate {
                    spec.label_flip_rate = r;
                }
                let seed = SeedPath::new(config.data_seed)
                    .label("test")
                    .label(&t.name)
                    .label(&s.name)
                    .finish();
                parts.push(generate_synthetic_source(&spec, seed)?);
            }
            if parts.is_empty() {
                return Err(Error::Config(format!(
                    "{key} draws from no synthetic source"
                )));
            }
            build_multi_source_pool(
                &parts,
                usize::MAX,
                SeedPath::new(config.data_seed).label(&t.name).finish(),
            )?
        };
        ds.name = t.name.clone();
        out.push(ds);
    }
    Ok(out)
}

/// Builds the pool, validation and test sets, and the cartography models.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let data_seed = SeedPath::new(config.data_seed);
    let sources = load_sources(config)?;
    let mut rests = Vec::with_capacity(sources.len());
    let mut vals = Vec::with_capacity(sources.len());
    for s in &sources {
        let (rest, val) = s.split_holdout(
            config.validation_fraction,
            data_seed.label("validation").label(&s.name).finish(),
        )?;
        rests.push(rest);
        vals.push(val);
    }
    let cap = config.per_source_cap.unwrap_or(usize::MAX);
    let pool = build_multi_source_pool(&rests, cap, data_seed.label("pool").finish())?;
    let mut validation = build_multi_source_pool(
        &vals,
        usize::MAX,
        data_seed.label("validation-pool").finish(),
    )?;
    validation.name = "validation".into();
    let test_sets = build_test_sets(config)?;
    if pool.is_empty() {
        return Err(Error::Capacity("the pool is empty".into()));
    }
    for t in &test_sets {
        if !t.is_empty()
            && (t.feature_dim() != pool.feature_dim() || t.num_classes() > pool.num_classes())
        {
            return Err(Error::Schema(format!(
                "test set {} does not match the pool's shape",
                t.name
            )));
        }
    }
    let model_config = config
        .classifier
        .to_config(pool.feature_dim(), pool.num_classes());
    log::info!(
        "pool: {} examples\n{}",
        pool.len(),
        pool::describe(pool.examples(), pool.num_classes())
    );

    let carto_cfg = config.cartography.with_seed(
        data_seed
            .label("cartography")
            .index(config.cartography.rng_seed)
            .finish(),
    );
    let cartography = run_cartography(
        pool.examples(),
        pool.examples(),
        &model_config,
        &carto_cfg,
        &config.thresholds,
    )
    .map_err(|e| e.context("pool cartography"))?;
    let test_cartography = match &config.stratify_test_set {
        Some(name) => {
            let test = test_sets
                .iter()
                .find(|t| &t.name == name)
                .expect("validated");
            let tcfg = config.cartography.with_seed(
                data_seed
                    .label("test-cartography")
                    .index(config.cartography.rng_seed)
                    .finish(),
            );
            Some(
                run_cartography(
                    test.examples(),
                    test.examples(),
                    &model_config,
                    &tcfg,
                    &config.thresholds,
                )
                .map_err(|e| e.context(format!("cartography of test set {name}")))?,
            )
        }
        None => None,
    };
    Ok(Prepared {
        config: config.clone(),
        pool,
        validation,
        test_sets,
        model_config,
        cartography,
        test_cartography,
    })
}

fn fit_or_uniform(prep: &Prepared, train: &[&Example], seed: u64) -> Result<Classifier> {
    if train.is_empty() {
        log::warn!("empty labelled set; using a uniform model");
        return Classifier::zeros(&prep.model_config);
    }
    let tcfg = prep.config.train.with_seed(seed);
    classifier::fit(
        &prep.model_config,
        train,
        &prep.validation.examples().iter().collect::<Vec<_>>(),
        &tcfg,
    )
}

fn val_accuracy(prep: &Prepared, model: &Classifier) -> Result<Option<f64>> {
    if prep.validation.is_empty() {
        Ok(None)
    } else {
        model.accuracy(prep.validation.examples()).map(Some)
    }
}

fn test_accuracies(prep: &Prepared, model: &Classifier) -> Result<BTreeMap<String, f64>> {
    prep.test_sets
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| Ok((t.name.clone(), model.accuracy(t.examples())?)))
        .collect()
}

/// Runs the full active learning loop for one strategy and seed on a fresh setup.
pub fn run_al(config: &ExperimentConfig, strategy: StrategyKind, seed: u64) -> Result<RunOutcome> {
    run_al_prepared(&prepare(config)?, strategy, seed)
}

pub fn run_al_prepared(prep: &Prepared, strategy: StrategyKind, seed: u64) -> Result<RunOutcome> {
    run_loop(prep, strategy, seed).map_err(|e| e.context(format!("run {strategy} seed {seed}")))
}

fn run_loop(prep: &Prepared, strategy: StrategyKind, seed: u64) -> Result<RunOutcome> {
    let cfg = &prep.config;
    let pool = &prep.pool;
    let run_seed = SeedPath::new(seed)
        .label(strategy.name())
        .index(cfg.train.rng_seed);
    let mut state = PoolState::seed_split(
        pool,
        cfg.seed_size,
        SeedPath::new(seed).label("seed-split").finish(),
    )
    .map_err(|e| match e {
        Error::Argument(m) => Error::Capacity(m),
        other => other,
    })?;
    let seed_labelled = state.labelled().clone();
    let reference = &prep.cartography.model;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut scores = Vec::new();

    for r in 0..cfg.rounds {
        if state.unlabelled().len() < cfg.k {
            return Err(Error::Capacity(format!(
                "round {r}: {} unlabelled examples left, {} required",
                state.unlabelled().len(),
                cfg.k
            )));
        }
        let train = pool.select(state.labelled())?;
        let model = fit_or_uniform(prep, &train, run_seed.label("fit").index(r as u64).finish())
            .map_err(|e| e.context(format!("round {r}")))?;
        let val_accuracy = val_accuracy(prep, &model)?;
        let composition = pool.composition(state.unlabelled());

        let selection = select_batch(
            strategy,
            &state,
            pool,
            &model,
            cfg.k,
            run_seed.label("acquire").index(r as u64).finish(),
            &cfg.acquisition,
        )
        .map_err(|e| e.context(format!("round {r}")))?;
        let batch = pool.select(&selection.ids)?;
        let per_source = pool.composition(&selection.ids);
        let acquisition_factor = acquisition_factor(&batch, &composition)?;
        let class_distribution = class_distribution(&batch, pool.num_classes())?;
        let output_uncertainty = output_uncertainty(reference, &batch)?;
        let labelled_size = state.labelled().len();
        state.transfer(&selection.ids)?;

        let labelled = pool.select(state.labelled())?;
        let remainder = pool.select(state.unlabelled())?;
        let input_diversity = input_diversity(&token_set(&labelled), &token_set(&remainder));

        log::debug!(
            "{strategy} seed {seed} round {r}: val acc {val_accuracy:?}, acquired {per_source:?}"
        );
        rounds.push(RoundLog {
            strategy: strategy.name().into(),
            seed,
            round: r,
            labelled_size,
            acquired: selection.ids,
            per_source,
            metrics: RoundMetrics {
                round: r,
                input_diversity,
                output_uncertainty,
                class_distribution,
                acquisition_factor,
            },
            val_accuracy,
        });
        if cfg.dump_scores {
            scores.push(selection.scores);
        }
    }

    let train = pool.select(state.labelled())?;
    let final_model = fit_or_uniform(
        prep,
        &train,
        run_seed.label("fit").index(cfg.rounds as u64).finish(),
    )
    .map_err(|e| e.context("final fit"))?;
    let final_val_accuracy = val_accuracy(prep, &final_model)?;
    let test_accuracy = test_accuracies(prep, &final_model)?;
    let stratified = match (&prep.test_cartography, &cfg.stratify_test_set) {
        (Some(carto), Some(name)) => {
            let test = prep.test_set(name).expect("validated");
            Some(stratified_accuracy(
                &final_model,
                test.examples(),
                &carto.entries,
            )?)
        }
        _ => None,
    };

    let acquired_ids: Vec<u64> = state
        .labelled()
        .difference(&seed_labelled)
        .copied()
        .collect();
    let acquired = pool.select(&acquired_ids)?;
    let profile = Profile {
        input_diversity: rounds.last().map_or(0.0, |l| l.metrics.input_diversity),
        output_uncertainty: output_uncertainty(reference, &acquired)?,
        class_distribution: class_distribution(&acquired, pool.num_classes())?,
    };

    Ok(RunOutcome {
        strategy,
        seed,
        seed_labelled,
        rounds,
        final_labelled: state.labelled().clone(),
        final_model,
        final_val_accuracy,
        test_accuracy,
        stratified,
        profile,
        scores,
    })
}

/// Replays the acquired batches of `rounds` on top of the seed set.
pub fn replay(
    seed_labelled: &BTreeSet<u64>,
    pool: &Dataset,
    rounds: &[RoundLog],
) -> Result<PoolState> {
    let unlabelled = pool
        .ids()
        .filter(|id| !seed_labelled.contains(id))
        .collect();
    let mut state = PoolState::from_sets(seed_labelled.clone(), unlabelled)?;
    for r in rounds {
        state.transfer(&r.acquired)?;
    }
    Ok(state)
}

/// Population mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(xs: &[f64]) -> Option<MeanStd> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some(MeanStd {
        mean,
        std: var.sqrt(),
        n: xs.len(),
    })
}

/// Aggregate over seeds for one strategy (or one difficulty combo).
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub accuracy: BTreeMap<String, MeanStd>,
    pub final_labelled_size: usize,
    pub completed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub outcome: std::result::Result<RunOutcome, String>,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<RunSummary>,
}

impl SuiteResult {
    pub fn failed(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn outcomes(&self, strategy: StrategyKind) -> impl Iterator<Item = &RunOutcome> {
        self.runs
            .iter()
            .filter(move |r| r.strategy == strategy)
            .filter_map(|r| r.outcome.as_ref().ok())
    }
}

fn summarize<'a>(
    label: &str,
    accs: impl Iterator<Item = Option<&'a BTreeMap<String, f64>>>,
    size: usize,
) -> RunSummary {
    let mut per_test: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let (mut completed, mut failed) = (0, 0);
    for a in accs {
        match a {
            Some(a) => {
                completed += 1;
                for (k, v) in a {
                    per_test.entry(k.clone()).or_default().push(*v);
                }
            }
            None => failed += 1,
        }
    }
    RunSummary {
        label: label.to_string(),
        accuracy: per_test
            .into_iter()
            .filter_map(|(k, v)| Some((k, mean_std(&v)?)))
            .collect(),
        final_labelled_size: size,
        completed,
        failed,
    }
}

fn thread_pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {parallelism} worker threads: {e}")))
}

/// Every strategy x seed run. Failed runs are recorded, not propagated.
pub fn run_suite(prep: &Prepared) -> Result<SuiteResult> {
    let cfg = &prep.config;
    let pairs: Vec<(StrategyKind, u64)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let runs: Vec<RunRecord> = thread_pool(cfg.parallelism)?.install(|| {
        pairs
            .par_iter()
            .map(|&(strategy, seed)| {
                let outcome = run_al_prepared(prep, strategy, seed).map_err(|e| {
                    log::error!("{e}");
                    e.to_string()
                });
                RunRecord {
                    strategy,
                    seed,
                    outcome,
                }
            })
            .collect()
    });
    let size = cfg.seed_size + cfg.rounds * cfg.k;
    let summaries = cfg
        .strategies
        .iter()
        .map(|&s| {
            summarize(
                s.name(),
                runs.iter()
                    .filter(|r| r.strategy == s)
                    .map(|r| r.outcome.as_ref().ok().map(|o| &o.test_accuracy)),
                size,
            )
        })
        .collect();
    Ok(SuiteResult { runs, summaries })
}

#[derive(Debug, Clone)]
pub struct AblatedSuite {
    pub retained: BTreeSet<u64>,
    pub pool_composition: BTreeMap<String, usize>,
    pub suite: SuiteResult,
}

/// Removes the hard-to-learn fraction of every source (by the full-pool
/// datamap) and reruns the suite on what remains.
pub fn run_ablated_suite(prep: &Prepared, fraction: f64) -> Result<AblatedSuite> {
    let retained =
        ablate_hard_to_learn(&prep.cartography.entries, &prep.pool.source_map(), fraction)?;
    let filtered = prep.pool.subset(&retained);
    let pool_composition = filtered.composition(&retained);
    log::info!("ablated pool: {pool_composition:?}");
    let suite = run_suite(&prep.with_pool(filtered))?;
    Ok(AblatedSuite {
        retained,
        pool_composition,
        suite,
    })
}

#[derive(Debug, Clone)]
pub struct SplitRecord {
    pub combo: Combo,
    pub seed: u64,
    pub train_size: usize,
    pub outcome: std::result::Result<BTreeMap<String, f64>, String>,
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub records: Vec<SplitRecord>,
    pub summaries: Vec<RunSummary>,
}

/// One conventional fit per combo and seed on a difficulty-balanced sample of
/// the pool, evaluated on every test set.
pub fn run_difficulty_split(prep: &Prepared) -> Result<SplitResult> {
    let cfg = &prep.config;
    let split = cfg
        .difficulty_split
        .as_ref()
        .ok_or_else(|| Error::Config("difficulty_split is not configured".into()))?;
    let mut jobs = Vec::new();
    for combo in &split.combos {
        for &seed in &cfg.seeds {
            let ids = build_difficulty_split(
                &prep.cartography.entries,
                combo,
                split.n,
                SeedPath::new(seed)
                    .label("split")
                    .label(&combo.to_string())
                    .finish(),
            )?;
            jobs.push((combo.clone(), seed, ids));
        }
    }
    let records: Vec<SplitRecord> = thread_pool(cfg.parallelism)?.install(|| {
        jobs.par_iter()
            .map(|(combo, seed, ids)| {
                let outcome = (|| {
                    let train = prep.pool.select(ids)?;
                    let fit_seed = SeedPath::new(*seed)
                        .label("split-fit")
                        .label(&combo.to_string())
                        .index(cfg.train.rng_seed);
                    let model = fit_or_uniform(prep, &train, fit_seed.finish())?;
                    test_accuracies(prep, &model)
                })()
                .map_err(|e: Error| e.context(format!("split {combo} seed {seed}")).to_string());
                SplitRecord {
                    combo: combo.clone(),
                    seed: *seed,
                    train_size: ids.len(),
                    outcome,
                }
            })
            .collect()
    });
    let summaries = split
        .combos
        .iter()
        .map(|c| {
            summarize(
                &c.to_string(),
                records
                    .iter()
                    .filter(|r| &r.combo == c)
                    .map(|r| r.outcome.as_ref().ok()),
                split.n,
            )
        })
        .collect();
    Ok(SplitResult { records, summaries })
}

/// Formats like C's `%.6g`: six significant digits, trailing zeros removed.
pub fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(r).map_err(to_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Writes `rounds{suffix}.csv`, `acquired{suffix}.csv`, `summary{suffix}.csv`
/// (one row per completed run), `aggregate{suffix}.csv`, `profile{suffix}.csv`,
/// `failures{suffix}.csv` and, when stratified evaluation ran,
/// `stratified{suffix}.csv`.
pub fn write_suite(dir: &Path, suffix: &str, prep: &Prepared, suite: &SuiteResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sources: Vec<String> = prep.pool.sources().into_iter().collect();
    let classes = prep.pool.num_classes();
    let ok = || suite.runs.iter().filter_map(|r| r.outcome.as_ref().ok());

    let mut header = strings(&["strategy", "seed", "round", "labelled_size", "val_acc"]);
    header.extend(sources.iter().map(|s| format!("n_{s}")));
    header.extend(strings(&["input_diversity", "output_uncertainty"]));
    header.extend((0..classes).map(|c| format!("class_{c}")));
    header.extend(sources.iter().map(|s| format!("af_{s}")));
    let mut rows = Vec::new();
    let mut acquired = Vec::new();
    for o in ok() {
        for l in &o.rounds {
            let mut row = vec![
                l.strategy.clone(),
                l.seed.to_string(),
                l.round.to_string(),
                l.labelled_size.to_string(),
                opt(l.val_accuracy),
            ];
            row.extend(
                sources
                    .iter()
                    .map(|s| l.per_source.get(s).copied().unwrap_or(0).to_string()),
            );
            row.push(fmt_float(l.metrics.input_diversity));
            row.push(fmt_float(l.metrics.output_uncertainty));
            row.extend(l.metrics.class_distribution.iter().map(|v| fmt_float(*v)));
            row.extend(
                sources
                    .iter()
                    .map(|s| opt(l.metrics.acquisition_factor.get(s).copied())),
            );
            rows.push(row);
            acquired.extend(l.acquired.iter().map(|id| {
                vec![
                    l.strategy.clone(),
                    l.seed.to_string(),
                    l.round.to_string(),
                    id.to_string(),
                ]
            }));
        }
    }
    write_csv(&dir.join(format!("rounds{suffix}.csv")), &header, &rows)?;
    write_csv(
        &dir.join(format!("acquired{suffix}.csv")),
        &strings(&["strategy", "seed", "round", "id"]),
        &acquired,
    )?;

    let tests: Vec<&str> = prep
        .test_sets
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| t.name.as_str())
        .collect();
    let mut header = strings(&["strategy", "seed", "final_labelled", "final_val_acc"]);
    header.extend(tests.iter().map(|t| format!("acc_{t}")));
    let rows: Vec<Vec<String>> = ok()
        .map(|o| {
            let mut row = vec![
                o.strategy.to_string(),
                o.seed.to_string(),
                o.final_labelled.len().to_string(),
                opt(o.final_val_accuracy),
            ];
            row.extend(tests.iter().map(|t| opt(o.test_accuracy.get(*t).copied())));
            row
        })
        .collect();
    write_csv(&dir.join(format!("summary{suffix}.csv")), &header, &rows)?;

    let rows: Vec<Vec<String>> = suite
        .summaries
        .iter()
        .flat_map(|s| {
            s.accuracy.iter().map(move |(test, m)| {
                vec![
                    s.label.clone(),
                    test.clone(),
                    fmt_float(m.mean),
                    fmt_float(m.std),
                    s.completed.to_string(),
                    s.failed.to_string(),
                    s.final_labelled_size.to_string(),
                ]
            })
        })
        .collect();
    write_csv(
        &dir.join(format!("aggregate{suffix}.csv")),
        &strings(&[
            "strategy",
            "test_set",
            "mean",
            "std",
            "runs",
            "failed",
            "final_labelled",
        ]),
        &rows,
    )?;

    let mut header = strings(&["strategy", "seed", "input_diversity", "output_uncertainty"]);
    header.extend((0..classes).map(|c| format!("class_{c}")));
    header.push("final_val_acc".into());
    let rows: Vec<Vec<String>> = ok()
        .map(|o| {
            let mut row = vec![
                o.strategy.to_string(),
                o.seed.to_string(),
                fmt_float(o.profile.input_diversity),
                fmt_float(o.profile.output_uncertainty),
            ];
            row.extend(o.profile.class_distribution.iter().map(|v| fmt_float(*v)));
            row.push(opt(o.final_val_accuracy));
            row
        })
        .collect();
    write_csv(&dir.join(format!("profile{suffix}.csv")), &header, &rows)?;

    let rows: Vec<Vec<String>> = suite
        .runs
        .iter()
        .filter_map(|r| {
            r.outcome
                .as_ref()
                .err()
                .map(|e| vec![r.strategy.to_string(), r.seed.to_string(), e.clone()])
        })
        .collect();
    write_csv(
        &dir.join(format!("failures{suffix}.csv")),
        &strings(&["strategy", "seed", "error"]),
        &rows,
    )?;

    let mut rows = Vec::new();
    for o in ok() {
        if let Some(s) = &o.stratified {
            for (d, r) in &s.strata {
                rows.push(vec![
                    o.strategy.to_string(),
                    o.seed.to_string(),
                    d.to_string(),
                    r.count.to_string(),
                    fmt_float(r.accuracy),
                ]);
            }
            rows.push(vec![
                o.strategy.to_string(),
                o.seed.to_string(),
                "overall".into(),
                s.total.to_string(),
                fmt_float(s.overall),
            ]);
        }
    }
    if !rows.is_empty() {
        write_csv(
            &dir.join(format!("stratified{suffix}.csv")),
            &strings(&["strategy", "seed", "difficulty", "count", "accuracy"]),
            &rows,
        )?;
    }

    if prep.config.dump_scores {
        let scores_dir = dir.join(format!("scores{suffix}"));
        fs::create_dir_all(&scores_dir).map_err(|e| Error::io(&scores_dir, e))?;
        for o in ok() {
            for (r, scores) in o.scores.iter().enumerate() {
                let rows: Vec<Vec<String>> = scores
                    .iter()
                    .map(|s| {
                        let source = prep
                            .pool
                            .get(s.example_id)
                            .map(|e| e.source.clone())
                            .unwrap_or_default();
                        vec![s.example_id.to_string(), source, fmt_float(s.score)]
                    })
                    .collect();
                let path = scores_dir.join(format!("{}_{}_round{r}.csv", o.strategy, o.seed));
                write_csv(&path, &strings(&["id", "source", "score"]), &rows)?;
            }
        }
    }
    Ok(())
}

pub fn write_datamap(path: &Path, entries: &[DatamapEntry], dataset: &Dataset) -> Result<()> {
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|e| {
            vec![
                e.example_id.to_string(),
                dataset
                    .get(e.example_id)
                    .map(|x| x.source.clone())
                    .unwrap_or_default(),
                fmt_float(e.mean_confidence),
                fmt_float(e.variability),
                fmt_float(e.correctness),
                e.difficulty.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        &strings(&[
            "id",
            "source",
            "mean_confidence",
            "variability",
            "correctness",
            "difficulty",
        ]),
        &rows,
    )
}

pub fn write_ids(path: &Path, ids: &BTreeSet<u64>) -> Result<()> {
    let rows: Vec<Vec<String>> = ids.iter().map(|id| vec![id.to_string()]).collect();
    write_csv(path, &strings(&["id"]), &rows)
}

/// Writes `splits.csv` (per seed) and `splits_summary.csv`.
pub fn write_splits(dir: &Path, result: &SplitResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows = Vec::new();
    for r in &result.records {
        match &r.outcome {
            Ok(accs) => rows.extend(accs.iter().map(|(t, a)| {
                vec![
                    r.combo.to_string(),
                    r.seed.to_string(),
                    r.train_size.to_string(),
                    t.clone(),
                    fmt_float(*a),
                    String::new(),
                ]
            })),
            Err(e) => rows.push(vec![
                r.combo.to_string(),
                r.seed.to_string(),
                r.train_size.to_string(),
                String::new(),
                String::new(),
                e.clone(),
            ]),
        }
    }
    write_csv(
        &dir.join("splits.csv"),
        &strings(&[
            "combo",
            "seed",
            "train_size",
            "test_set",
            "accuracy",
            "error",
        ]),
        &rows,
    )?;
    let rows: Vec<Vec<String>> = result
        .summaries
        .iter()
        .flat_map(|s| {
            s.accuracy.iter().map(move |(t, m)| {
                vec![
                    s.label.clone(),
                    t.clone(),
                    fmt_float(m.mean),
                    fmt_float(m.std),
                    s.completed.to_string(),
                    s.failed.to_string(),
                ]
            })
        })
        .collect();
    write_csv(
        &dir.join("splits_summary.csv"),
        &strings(&["combo", "test_set", "mean", "std", "runs", "failed"]),
        &rows,
    )
}

/// Copies the resolved config and writes a small run manifest.
pub fn write_config(
    dir: &Path,
    config: &ExperimentConfig,
    runs: usize,
    failed: usize,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("config.toml");
    fs::write(&path, config.to_toml()).map_err(|e| Error::io(&path, e))?;
    let manifest = serde_json::json!({
        "name": config.name,
        "config": "config.toml",
        "final_evaluation": "model refit on the final labelled set after the last acquisition round",
        "runs": runs,
        "failed": failed,
    });
    let path = dir.join("manifest.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).expect("json"),
    )
    .map_err(|e| Error::io(&path, e))
}
