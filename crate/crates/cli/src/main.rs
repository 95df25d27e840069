use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eqtrends::dist::{DEFAULT_W_REPS, DEFAULT_W_SEED};

mod analysis;
mod common;
mod study;

#[derive(Parser, Debug)]
#[command(
    name = "eqtrends",
    version,
    about = "Equivalence tests for pre-treatment trends in difference-in-differences"
)]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run equivalence tests at the given thresholds.
    Test(AnalysisArgs),
    /// Smallest thresholds at which each test concludes equivalence.
    Thresholds(AnalysisArgs),
    /// Rejection-frequency study from a scenario file.
    Simulate(SimulateArgs),
    /// Simulate and cache quantiles of the self-normalized limit.
    Wquantiles(WquantilesArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Args, Debug)]
pub struct AnalysisArgs {
    /// Long-format panel CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Column mapping, e.g. `unit=id,time=month,outcome=y,group=treated`
    /// or `cohort=first_treated`; `covariates=x1+x2` selects covariates.
    #[arg(long)]
    pub schema: Option<String>,
    /// Pre-treatment periods to test (time labels or month names, `a-b` ranges).
    #[arg(long)]
    pub periods: Option<String>,
    /// Time label of the base period (two-group input; default: last period).
    #[arg(long)]
    pub base_period: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Comma-separated subset of iu, boot, cboot, mean, rms (or `all`).
    #[arg(long, default_value = "all")]
    pub tests: String,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap_b: usize,
    /// Which bootstrap tests to keep: gaussian, wild_cluster or both.
    #[arg(long, default_value = "both")]
    pub bootstrap_variant: String,
    /// Subsample fractions for the RMS test.
    #[arg(long, default_value = "0.2,0.4,0.6,0.8,1")]
    pub grid: String,
    /// Master seed; generated and reported when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// What to print on stdout.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Staggered input: placebo cells to pool into the controls, `cohort:period`.
    #[arg(long, value_delimiter = ',')]
    pub pool: Vec<String>,
    /// Staggered input: keep periods after the latest adoption.
    #[arg(long)]
    pub full_window: bool,
    #[arg(long, default_value_t = DEFAULT_W_REPS)]
    pub w_reps: usize,
    #[arg(long, default_value_t = DEFAULT_W_SEED)]
    pub w_seed: u64,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the replication count.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long, default_value_t = DEFAULT_W_REPS)]
    pub w_reps: usize,
    #[arg(long, default_value_t = DEFAULT_W_SEED)]
    pub w_seed: u64,
}

#[derive(Args, Debug)]
pub struct WquantilesArgs {
    #[arg(long, default_value = "0.2,0.4,0.6,0.8,1")]
    pub grid: String,
    #[arg(long, default_value_t = DEFAULT_W_REPS)]
    pub reps: usize,
    #[arg(long, default_value_t = DEFAULT_W_SEED)]
    pub seed: u64,
    /// Write the table here instead of the cache directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: could not start thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match &cli.command {
        Command::Test(a) => analysis::run(a, false),
        Command::Thresholds(a) => analysis::run(a, true),
        Command::Simulate(a) => study::simulate(a),
        Command::Wquantiles(a) => study::wquantiles(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(common::exit_code(&e))
        }
    }
}
