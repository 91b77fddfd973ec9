//! `adnet`: train, evaluate and inspect Active Dendrites Networks on
//! permuted MNIST.

mod commands;
mod fetch;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable naming the default MNIST directory.
pub const DATA_DIR_ENV: &str = "ADNET_DATA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "adnet",
    version,
    about = "Active Dendrites Networks for continual learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the configured model and write metrics, summary and checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on every task's test set
    Eval(EvalArgs),
    /// Winner frequencies, overlaps and dendrite responses of a checkpoint
    Analyze(AnalyzeArgs),
    /// Print the total and effective parameter counts of a config
    Params(ConfigArgs),
    /// Compare analytic and finite-difference gradients of every layer type
    Gradcheck(GradcheckArgs),
    /// Write a complete config for a profile
    MakeConfig(MakeConfigArgs),
    /// Download the four MNIST files
    FetchMnist(FetchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Desk,
    Fullscale,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON experiment config; without it the --profile defaults are used
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Defaults used when no config file is given
    #[arg(long, value_enum, default_value_t = ProfileArg::Desk)]
    pub profile: ProfileArg,
    /// Number of permuted-MNIST tasks
    #[arg(long)]
    pub tasks: Option<usize>,
    /// Experiment seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a config field by dotted path, e.g. model.hidden=[128,128]; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Suppress per-epoch progress on stderr
    #[arg(long, default_value_t = false)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// MNIST directory; defaults to $ADNET_DATA_DIR, else the checkpoint's config
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Also evaluate with precomputed gate factors and check both agree
    #[arg(long, default_value_t = false)]
    pub factorized: bool,
    /// Present the one-hot context of task (t + N) mod T instead of the true one
    #[arg(long, value_name = "N")]
    pub shift: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Checkpoint written by `train`
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// MNIST directory; defaults to $ADNET_DATA_DIR, else the checkpoint's config
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Output directory; defaults to <output.dir>/analysis of the checkpoint's config
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Test images per task used for winner frequencies
    #[arg(long, default_value_t = 5000)]
    pub samples: usize,
    /// Frequency at which a unit counts as part of a task's subnetwork
    #[arg(long, default_value_t = adnet::analysis::DEFAULT_OVERLAP_THRESHOLD)]
    pub threshold: f64,
    /// Leading units shown in heatmaps and response tables
    #[arg(long, default_value_t = 64)]
    pub neurons: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random instances per layer type
    #[arg(long, default_value_t = 50)]
    pub trials: u64,
    /// First instance seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct MakeConfigArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Write here instead of stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// Target directory; defaults to $ADNET_DATA_DIR, else ./data
    #[arg(long, value_name = "DIR")]
    pub dir: Option<PathBuf>,
    /// Mirror serving <name>.gz for each MNIST file
    #[arg(long, default_value = fetch::DEFAULT_MIRROR)]
    pub mirror: String,
    /// Download even if the files already exist
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

/// A failed command: bad input exits 1, anything else 2.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<adnet::Error> for Failure {
    fn from(e: adnet::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Params(a) => commands::params(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::MakeConfig(a) => commands::make_config(&a),
        Command::FetchMnist(a) => fetch::fetch_mnist(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("adnet: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("adnet: {msg}");
            ExitCode::from(2)
        }
    }
}
