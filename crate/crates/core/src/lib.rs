//! Pool-based active learning over multi-source unlabelled data, with
//! dataset-cartography diagnostics.
//!
//! The crate is organised around the active learning loop:
//!
//! - [`pool`]: examples, datasets, synthetic sources and the labelled /
//!   unlabelled bookkeeping.
//! - [`classifier`]: a small feed-forward network with dropout, used both as
//!   the model-in-the-loop and as the cartography model.
//! - [`acquisition`]: Random, MC-dropout max-entropy, BALD and discriminative
//!   acquisition.
//! - [`cartography`]: training dynamics, datamaps, difficulty classes,
//!   hard-to-learn ablation and difficulty splits.
//! - [`metrics`]: acquisition profiling and stratified evaluation.
//! - [`experiment`]: multi-round, multi-seed orchestration and CSV artifacts.
//! - [`cli`]: the `cartal` command-line entry points.

pub mod acquisition;
pub mod cartography;
pub mod classifier;
pub mod cli;
pub mod config;
mod error;
pub mod experiment;
pub mod metrics;
pub mod pool;
pub mod report;
pub mod seed;

pub use error::{Error, Result};
