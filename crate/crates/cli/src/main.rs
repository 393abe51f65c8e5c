//! `relcomp`: correlation diagnostics, training, evaluation, Monte Carlo
//! verification and one-off composition from the command line.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical divergence,
//! 4 verification failure.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Diverged(String),
    VerificationFailed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::VerificationFailed(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Diverged(m) => write!(f, "training diverged: {m}"),
            CliError::VerificationFailed(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<relcomp::Error> for CliError {
    fn from(e: relcomp::Error) -> Self {
        match e {
            relcomp::Error::Diverged { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "relcomp",
    version,
    about = "Bilinear relation composition toolkit"
)]
pub struct Cli {
    /// Flat `key = value` config file (or a previous `config_echo.json`).
    /// Flags take precedence over it.
    #[arg(long, global = true, env = "RELCOMP_CONFIG")]
    pub config: Option<PathBuf>,

    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; 0 uses all available cores. Results do not depend
    /// on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Correlation between embedding dimensions: summary JSON and histogram CSV.
    Correlate(CorrelateArgs),
    /// Fit the operator to relation groups; writes operator JSON and trace CSV.
    Train(TrainArgs),
    /// Score an operator (or PairDiff) on SAT, MaxDiff and held-out groups.
    Eval(EvalArgs),
    /// Run the Monte Carlo verification manifest.
    Verify(VerifyArgs),
    /// Print the relation vector of one word pair as JSON.
    Compose(ComposeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct EmbeddingArgs {
    /// Embedding text file.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// `no-header` (word v1 .. vd per line) or `with-header` (first line `m d`).
    #[arg(long)]
    pub format: Option<relcomp::embedding::TextFormat>,
    /// Standardize every dimension to zero mean and unit variance first.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub standardize: Option<bool>,
}

#[derive(Args, Debug)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub input: EmbeddingArgs,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Include the full d × d matrix in the summary.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub include_matrix: Option<bool>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: EmbeddingArgs,
    /// BATS-style directory or JSONL file of relation groups.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda_a: Option<f64>,
    #[arg(long)]
    pub negatives_per_pair: Option<usize>,
    #[arg(long)]
    pub negative_strategy: Option<relcomp::training::NegativeStrategy>,
    #[arg(long)]
    pub candidate_pool: Option<usize>,
    #[arg(long)]
    pub max_positives_per_group: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub init_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub init_hi: Option<f64>,
    #[arg(long)]
    pub adagrad_epsilon: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// `diagonal` (P = pI, Q = qI) or `general`.
    #[arg(long)]
    pub mode: Option<relcomp::compose::ConstraintMode>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub allow_unstandardized: Option<bool>,
    /// Fill the trace's seconds column (makes the trace run-dependent).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub record_timing: Option<bool>,
    /// SAT questions scored after every epoch.
    #[arg(long)]
    pub sat: Option<PathBuf>,
    /// SemEval relations scored after every epoch.
    #[arg(long)]
    pub semeval: Option<PathBuf>,
    #[arg(long)]
    pub oov: Option<relcomp::evaluation::OovPolicy>,
}

#[derive(Args, Debug)]
pub struct OperatorArgs {
    /// Operator JSON written by `train`.
    #[arg(long)]
    pub operator: Option<PathBuf>,
    /// Use PairDiff (A = 0, P = I, Q = −I) instead of an operator file.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub pairdiff: Option<bool>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: EmbeddingArgs,
    #[command(flatten)]
    pub operator: OperatorArgs,
    /// SAT-style JSONL questions.
    #[arg(long)]
    pub sat: Option<PathBuf>,
    /// SemEval-style JSON file or directory.
    #[arg(long)]
    pub semeval: Option<PathBuf>,
    /// Relation groups for k-fold held-out classification.
    #[arg(long)]
    pub bats: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// `skip` or `count-wrong`.
    #[arg(long)]
    pub oov: Option<relcomp::evaluation::OovPolicy>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub theorem1_d: Option<usize>,
    /// Quadruples per estimate in the independence check.
    #[arg(long)]
    pub theorem1_n: Option<usize>,
    #[arg(long)]
    pub theorem1_operators: Option<usize>,
    #[arg(long)]
    pub theorem1_a_scale: Option<f64>,
    /// Comma-separated: standard-normal, rademacher.
    #[arg(long)]
    pub distributions: Option<String>,
    #[arg(long)]
    pub zero_d: Option<usize>,
    #[arg(long)]
    pub zero_n: Option<usize>,
    #[arg(long)]
    pub closed_form_d: Option<usize>,
    #[arg(long)]
    pub closed_form_n: Option<usize>,
    #[arg(long)]
    pub closed_form_draws: Option<usize>,
    #[arg(long)]
    pub closed_form_tolerance_se: Option<f64>,
    #[arg(long)]
    pub coupling_d: Option<usize>,
    #[arg(long)]
    pub coupling_n: Option<usize>,
    #[arg(long)]
    pub correlation_m: Option<usize>,
    #[arg(long)]
    pub correlation_d: Option<usize>,
    #[arg(long)]
    pub moments_m: Option<usize>,
    #[arg(long)]
    pub moments_d: Option<usize>,
    /// Also require each independence estimate to be within 3σ of zero.
    /// Low-power warnings never fail a run.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub strict: Option<bool>,
}

#[derive(Args, Debug)]
pub struct ComposeArgs {
    #[command(flatten)]
    pub input: EmbeddingArgs,
    #[command(flatten)]
    pub operator: OperatorArgs,
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long)]
    pub tail: Option<String>,
    /// Also write the result and a config echo here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("relcomp: {e}");
            ExitCode::from(e.code())
        }
    }
}
