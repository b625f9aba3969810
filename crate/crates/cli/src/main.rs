use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ctlab::config::{Experiment, ExperimentConfig};
use ctlab::Outcome;

#[derive(Parser)]
#[command(name = "ctlab", version, about = "Sparse-view CT reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Sample a perturbed-phantom training set
    GenDataset(Flags),
    /// Reconstruction quality against the number of views
    Sweep(Flags),
    /// Likelihood-weight schedule × NFE × views grid
    ScheduleGrid(Flags),
    /// Clean versus mismatched measurements across resolutions
    Gap(Flags),
    /// One reconstruction with trajectory output
    Reconstruct(Flags),
}

#[derive(clap::Args)]
struct Flags {
    /// TOML experiment config
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads
    #[arg(long)]
    threads: Option<usize>,
    /// Keep every sampler step as an image (reconstruct)
    #[arg(long)]
    snapshot_steps: bool,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, flags) = match cli.verb {
        Verb::GenDataset(f) => (Experiment::GenDataset, f),
        Verb::Sweep(f) => (Experiment::Sweep, f),
        Verb::ScheduleGrid(f) => (Experiment::ScheduleGrid, f),
        Verb::Gap(f) => (Experiment::Gap, f),
        Verb::Reconstruct(f) => (Experiment::Reconstruct, f),
    };

    let plan = (|| {
        let mut cfg = match &flags.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.seed = flags.seed.or(cfg.seed);
        cfg.out = flags.out.clone().or(cfg.out);
        cfg.threads = flags.threads.or(cfg.threads);
        if flags.snapshot_steps {
            cfg.snapshot_steps = Some(true);
        }
        cfg.resolve(Some(experiment))
    })();
    let plan = match plan {
        Ok(p) => p,
        Err(e) => {
            eprintln!("ctlab: config error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    match ctlab::execute(&plan) {
        Ok(outcome) => {
            match &outcome {
                Outcome::Dataset { manifest_sha256 } => {
                    println!("wrote {} (manifest sha256 {manifest_sha256})", plan.out.display())
                }
                Outcome::Grid(s) => println!("wrote {} rows to {}", s.rows.len(), s.out.display()),
            }
            let failed = outcome.failed_cells();
            if failed > 0 {
                eprintln!("ctlab: {failed} cell(s) failed; see the `error` column");
                return ExitCode::from(EXIT_RUNTIME);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ctlab: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
