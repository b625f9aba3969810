//! Batch experiment driver for sparse-view CT reconstruction studies.
//!
//! Every experiment is described by a TOML [`config::ExperimentConfig`],
//! resolved into a [`config::Plan`] and executed by [`execute`].

pub mod config;
pub mod dataset;
pub mod domain;
pub mod output;
pub mod run;

use anyhow::Result;

use config::{Experiment, Plan};

/// What an experiment produced.
#[derive(Debug)]
pub enum Outcome {
    Dataset { manifest_sha256: String },
    Grid(run::RunSummary),
}

impl Outcome {
    pub fn failed_cells(&self) -> usize {
        match self {
            Outcome::Dataset { .. } => 0,
            Outcome::Grid(s) => s.failed,
        }
    }
}

/// Runs `plan`, on a dedicated pool when `plan.threads` is set.
pub fn execute(plan: &Plan) -> Result<Outcome> {
    let go = || match plan.experiment {
        Experiment::GenDataset => dataset::run_gen_dataset(plan).map(|h| Outcome::Dataset { manifest_sha256: h }),
        Experiment::Reconstruct => run::run_reconstruct(plan).map(Outcome::Grid),
        _ => run::run_grid(plan).map(Outcome::Grid),
    };
    match plan.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(go),
        None => go(),
    }
}
