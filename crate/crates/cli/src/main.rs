//! `lcbn`: simulate data, fit hierarchical diagnostic models, check
//! identifiability and run simulation studies.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{FitArgs, Theorem};

const EXIT_INTERNAL: u8 = 1;
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(name = "lcbn", version, about)]
struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one dataset from an experiment config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Directory receiving responses.csv, q.csv, hierarchy.json and truth.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        replicate: usize,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate the hierarchy and model parameters from responses.
    Fit {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        q: PathBuf,
        #[arg(long, default_value = "dina")]
        model: String,
        /// Fit on this hierarchy instead of learning one.
        #[arg(long)]
        hierarchy: Option<PathBuf>,
        /// JSON file of fit settings; flags below override it.
        #[arg(long)]
        control: Option<PathBuf>,
        /// Comma-separated penalty values, e.g. -0.5,-1,-2.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        lambda_grid: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check identifiability conditions for a Q-matrix and hierarchy.
    CheckId {
        #[arg(long)]
        q: PathBuf,
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long, value_enum, default_value = "dina-strict")]
        theorem: Theorem,
        /// Candidate limit for subset searches.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 2)]
        max_flips: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every setting of an experiment config and tabulate metrics.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the replicate count of every setting.
        #[arg(long)]
        replicates: Option<usize>,
    },
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    match cli.command {
        Command::Simulate {
            config,
            out,
            replicate,
            seed,
        } => commands::simulate_cmd(&config, &out, replicate, seed),
        Command::Fit {
            responses,
            q,
            model,
            hierarchy,
            control,
            lambda_grid,
            seed,
            restarts,
            max_iter,
            tol,
            out,
        } => commands::fit_cmd(FitArgs {
            responses,
            q,
            model,
            hierarchy,
            control,
            lambda_grid,
            seed,
            restarts,
            max_iter,
            tol,
            out,
        }),
        Command::CheckId {
            q,
            hierarchy,
            theorem,
            budget,
            max_flips,
            out,
        } => commands::check_id_cmd(&q, &hierarchy, theorem, budget, max_flips, out.as_deref()),
        Command::Experiment {
            config,
            out,
            replicates,
        } => commands::experiment_cmd(&config, &out, replicates),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<lcbn::Error>() {
            return match e {
                lcbn::Error::Numerical(_) => EXIT_INTERNAL,
                _ => EXIT_INPUT,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_INPUT;
        }
    }
    EXIT_INTERNAL
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
