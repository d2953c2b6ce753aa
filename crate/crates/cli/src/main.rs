//! `dl`: command-line driver for the discovery learning pipeline.
//!
//! Exit status is 0 on success, 2 on usage errors and 1 on data errors.
//! Data errors are printed to stderr as one JSON object with `error` (a
//! stable kind tag) and `message`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "dl", version, about = "Discovery learning for battery cycle-life evaluation")]
struct Cli {
    /// Worker threads for parallel fan-out (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Historical,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckupArg {
    First,
    Fiftieth,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one cycle of a cell scenario to a time-series CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset directory.
    GenDataset {
        #[command(flatten)]
        common: Common,
        /// Built-in corpus used when no --config is given.
        #[arg(long, value_enum, default_value = "test")]
        role: RoleArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Posterior summary of one cell's check-up.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        cell: String,
        #[arg(long, value_enum, default_value = "first")]
        checkup: CheckupArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Physics features of every cell in a dataset.
    Features {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the zero-shot oracle on a historical dataset.
    TrainOracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Precomputed features CSV; computed from the dataset otherwise.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict cycle lives from a model and a features CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full closed loop and write report.json and predictions.csv.
    RunLoop {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        historical: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics of a predictions CSV against its observed column.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Time and energy cost of a testing campaign.
    Cost {
        /// Built-in assumption set.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        set: u8,
        /// Assumptions JSON; overrides --set.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Round intermediates as the published figures do.
        #[arg(long)]
        paper_rounding: bool,
        /// Print a table instead of JSON.
        #[arg(long)]
        table: bool,
    },
}

pub enum Failure {
    Usage(String),
    Data(discovery::Error),
}

impl From<discovery::Error> for Failure {
    fn from(e: discovery::Error) -> Self {
        Failure::Data(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            return report(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool is configured once");
    }
    let result = match cli.command {
        Command::Simulate { common, out } => commands::simulate(&common, &out),
        Command::GenDataset { common, role, out } => commands::gen_dataset(&common, role, &out),
        Command::Infer { common, dataset, cell, checkup, out } => commands::infer(&common, &dataset, &cell, checkup, &out),
        Command::Features { common, dataset, out } => commands::features(&common, &dataset, &out),
        Command::TrainOracle { common, dataset, features, out } => {
            commands::train_oracle(&common, &dataset, features.as_deref(), &out)
        }
        Command::Predict { model, features, out } => commands::predict(&model, &features, &out),
        Command::RunLoop { common, historical, test, out } => commands::run_loop(&common, &historical, &test, &out),
        Command::Evaluate { predictions } => commands::evaluate(&predictions),
        Command::Cost { set, config, paper_rounding, table } => {
            commands::cost(set, config.as_deref(), paper_rounding, table)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    let (code, kind, message) = match f {
        Failure::Usage(m) => (2, "usage", m),
        Failure::Data(e) => (1, e.kind(), e.to_string()),
    };
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}
