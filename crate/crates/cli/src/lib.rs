//! `semrob` command-line harness.
//!
//! Exit codes: 0 success, 1 configuration or usage error (including
//! insufficient data), 2 I/O or malformed input file, 3 numerical failure.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{ExperimentConfig, SweepAxis};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<semrob_core::Error> for CliError {
    fn from(e: semrob_core::Error) -> Self {
        use semrob_core::Error as E;
        match e {
            E::Numerical(_) | E::DegenerateHyperplane | E::DegeneratePerturbation => {
                CliError::Numerical(e.to_string())
            }
            E::Parse(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "semrob", version, about = "Semantic robustness campaigns over synthetic latent populations")]
pub struct Cli {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SharedArgs {
    /// Flat JSON experiment configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (outputs do not depend on it).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic population JSON.
    Gen(GenArgs),
    /// Attack identities; writes a results CSV and a summary JSON.
    Attack(AttackArgs),
    /// Robust accuracy along one experiment axis.
    Sweep(SweepArgs),
    /// Rank attributes from an attack results CSV.
    Rank(RankArgs),
    /// Randomized-smoothing certification.
    Certify(CertifyArgs),
    /// Certified-accuracy curve from a certification CSV.
    Curve(CurveArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub num_identities: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ExperimentArgs {
    /// Population JSON (otherwise generated from the seed).
    #[arg(long)]
    pub population: Option<PathBuf>,
    /// Basis JSON (otherwise random orthonormal from the seed).
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Global budget scale ε: M becomes M / ε².
    #[arg(long)]
    pub budget_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// pgd or fab.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub num_attacked: Option<usize>,
    /// Restrict the search to a single attribute (index).
    #[arg(long)]
    pub only_attribute: Option<usize>,
    /// Summary JSON path (default: next to the results CSV).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// dataset-size, num-attacked or budget.
    #[arg(long)]
    pub axis: Option<String>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub num_attacked: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Attack results CSV.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long)]
    pub budget_scale: Option<f64>,
    /// Significance level of the adjacent-pair tests.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// isotropic or anisotropic.
    #[arg(long)]
    pub mode: Option<String>,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long)]
    pub num_certified: Option<usize>,
    /// Noise samples used to pick the top class.
    #[arg(long)]
    pub n0: Option<u64>,
    /// Noise samples used to bound its probability.
    #[arg(long)]
    pub n: Option<u64>,
    /// One-sided Clopper–Pearson failure probability.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Merge these certification CSVs (best radius per identity) instead of
    /// certifying.
    #[arg(long, num_args = 1..)]
    pub envelope: Option<Vec<PathBuf>>,
    /// Also write the per-identity best certificate over all sigmas here.
    #[arg(long)]
    pub envelope_out: Option<PathBuf>,
    /// Also write the certified-accuracy curve of the (envelope) results.
    #[arg(long)]
    pub curve_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Certification CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub step: Option<f64>,
    /// Largest radius of the grid (default: largest certified radius).
    #[arg(long)]
    pub max: Option<f64>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("semrob: {e}");
            e.exit_code()
        }
    }
}
