//! Command-line front end. Each `cmd_*` returns the process exit code:
//! 0 on success, 1 on usage or configuration errors, 2 when some runs failed.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::experiment::{self, Prepared};
use crate::pool::generate_synthetic_source;
use crate::report::{build_report, render_all, TableFormat};
use crate::seed::SeedPath;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "cartal",
    version,
    about = "Active learning on multi-source pools with dataset cartography"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic sources of a config as JSONL files.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every strategy x seed active learning loop.
    Run(RunArgs),
    /// Run the suite on the full pool and on a pool without its hard-to-learn examples.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Fraction removed per source; defaults to the config's `ablation`, then 0.25.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Train on difficulty-balanced subsets of the pool.
    Splits(RunArgs),
    /// Run the suite and report test accuracy per difficulty level.
    Stratify {
        #[command(flatten)]
        run: RunArgs,
        /// Test set to stratify; defaults to the config's `stratify_test_set`.
        #[arg(long)]
        test_set: Option<String>,
    },
    /// Render summary tables from an experiment directory.
    Report {
        #[arg(long)]
        exp: PathBuf,
        #[arg(long, default_value = "md")]
        format: String,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated strategy names, overriding the config.
    #[arg(long)]
    pub strategies: Option<String>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Number of runs executed concurrently.
    #[arg(long)]
    pub parallel: Option<usize>,
}

impl RunArgs {
    /// Loads the config and applies the command-line overrides.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(list) = &self.strategies {
            config.strategies = list
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<_>>()?;
        }
        if let Some(list) = &self.seeds {
            config.seeds = list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Argument(format!("invalid seed {s:?}")))
                })
                .collect::<Result<_>>()?;
        }
        if let Some(p) = self.parallel {
            config.parallelism = p;
        }
        config.validate()?;
        Ok(config)
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("CARTAL_LOG", "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

fn report_error(e: &Error) -> i32 {
    eprintln!("error: {e}");
    EXIT_ERROR
}

fn done(result: Result<i32>) -> i32 {
    result.unwrap_or_else(|e| report_error(&e))
}

/// Parses `args` (including the program name) and dispatches.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Generate { config, out } => cmd_generate(&config, &out),
        Command::Run(args) => cmd_run(&args),
        Command::Ablate { run, fraction } => cmd_ablate(&run, fraction),
        Command::Splits(args) => cmd_splits(&args),
        Command::Stratify { run, test_set } => cmd_stratify(&run, test_set),
        Command::Report { exp, format } => cmd_report(&exp, &format),
    }
}

pub fn cmd_generate(config: &Path, out: &Path) -> i32 {
    done((|| {
        let config = ExperimentConfig::load(config)?;
        config.validate()?;
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let mut manifest = Vec::new();
        for (i, s) in config
            .sources
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_synthetic())
        {
            let spec = s.synthetic_spec(&format!("sources[{i}]"))?;
            let ds = generate_synthetic_source(
                &spec,
                SeedPath::new(config.data_seed)
                    .label("source")
                    .label(&s.name)
                    .finish(),
            )?;
            let file = format!("{}.jsonl", s.name);
            let path = out.join(&file);
            fs::write(&path, ds.to_jsonl()).map_err(|e| Error::io(&path, e))?;
            manifest.push(serde_json::json!({
                "name": s.name,
                "file": file,
                "examples": ds.len(),
                "flipped_ids": ds.meta.flipped.keys().collect::<Vec<_>>(),
                "original_labels": ds.meta.flipped.values().collect::<Vec<_>>(),
            }));
        }
        let path = out.join("manifest.json");
        let text = serde_json::to_string_pretty(
            &serde_json::json!({ "data_seed": config.data_seed, "sources": manifest }),
        )
        .expect("json");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(EXIT_OK)
    })())
}

fn prepare_logged(config: &ExperimentConfig) -> Result<Prepared> {
    log::info!("preparing {}", config.name);
    experiment::prepare(config)
}

fn exit_for(failed: usize) -> i32 {
    if failed > 0 {
        eprintln!("{failed} run(s) failed; see failures.csv");
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

pub fn cmd_run(args: &RunArgs) -> i32 {
    done(
        args.resolve()
            .and_then(|config| run_and_write(&config, &args.out)),
    )
}

fn run_and_write(config: &ExperimentConfig, out: &Path) -> Result<i32> {
    let prep = prepare_logged(config)?;
    let suite = experiment::run_suite(&prep)?;
    experiment::write_suite(out, "", &prep, &suite)?;
    experiment::write_datamap(
        &out.join("datamap.csv"),
        &prep.cartography.entries,
        &prep.pool,
    )?;
    if let Some(carto) = &prep.test_cartography {
        let name = config
            .stratify_test_set
            .as_deref()
            .expect("set with test cartography");
        let test = prep.test_set(name).expect("validated");
        experiment::write_datamap(&out.join("test_datamap.csv"), &carto.entries, test)?;
    }
    experiment::write_config(out, config, suite.runs.len(), suite.failed())?;
    Ok(exit_for(suite.failed()))
}

pub fn cmd_ablate(args: &RunArgs, fraction: Option<f64>) -> i32 {
    done((|| {
        let mut config = args.resolve()?;
        let fraction = fraction.or(config.ablation).unwrap_or(0.25);
        config.ablation = Some(fraction);
        config.validate()?;
        let prep = prepare_logged(&config)?;
        let original = experiment::run_suite(&prep)?;
        let ablated = experiment::run_ablated_suite(&prep, fraction)?;
        experiment::write_suite(&args.out, "", &prep, &original)?;
        experiment::write_suite(
            &args.out,
            "_ablated",
            &prep.with_pool(prep.pool.subset(&ablated.retained)),
            &ablated.suite,
        )?;
        experiment::write_ids(&args.out.join("retained.csv"), &ablated.retained)?;
        experiment::write_datamap(
            &args.out.join("datamap.csv"),
            &prep.cartography.entries,
            &prep.pool,
        )?;
        let failed = original.failed() + ablated.suite.failed();
        experiment::write_config(
            &args.out,
            &config,
            original.runs.len() + ablated.suite.runs.len(),
            failed,
        )?;
        Ok(exit_for(failed))
    })())
}

pub fn cmd_splits(args: &RunArgs) -> i32 {
    done((|| {
        let config = args.resolve()?;
        let prep = prepare_logged(&config)?;
        let result = experiment::run_difficulty_split(&prep)?;
        experiment::write_splits(&args.out, &result)?;
        experiment::write_datamap(
            &args.out.join("datamap.csv"),
            &prep.cartography.entries,
            &prep.pool,
        )?;
        let failed = result.records.iter().filter(|r| r.outcome.is_err()).count();
        experiment::write_config(&args.out, &config, result.records.len(), failed)?;
        Ok(exit_for(failed))
    })())
}

pub fn cmd_stratify(args: &RunArgs, test_set: Option<String>) -> i32 {
    done((|| {
        let mut config = args.resolve()?;
        if test_set.is_some() {
            config.stratify_test_set = test_set;
            config.validate()?;
        }
        if config.stratify_test_set.is_none() {
            return Err(Error::Config(
                "stratify needs --test-set or stratify_test_set in the config".into(),
            ));
        }
        run_and_write(&config, &args.out)
    })())
}

pub fn cmd_report(exp: &Path, format: &str) -> i32 {
    done((|| {
        let format: TableFormat = format.parse()?;
        let text = render_all(&build_report(exp)?, format);
        let path = exp.join(match format {
            TableFormat::Markdown => "report.md",
            TableFormat::Csv => "report.csv",
        });
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        print!("{text}");
        Ok(EXIT_OK)
    })())
}
