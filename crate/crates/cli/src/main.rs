//! `scirp`: batch front end. Every command writes its artifacts into `--out`
//! and a one-object JSON summary to stdout. Failures print
//! `{"error": {"kind", "message"}}` to stderr and exit nonzero.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use scirp::instance::Uncertainty;
use scirp::simulate::Mode;

#[derive(Debug, Parser)]
#[command(name = "scirp", version, about = "Stochastic cyclic inventory routing with supply uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random base-system instance.
    Gen(GenArgs),
    /// Enumerate the feasible cluster pool.
    Clusters(Common),
    /// Solve the set-partitioning model at one penalty pair.
    Solve(SolveArgs),
    /// Solve the purchasing MDP of a plan and extract its (s,S) rules.
    Mdp(MdpArgs),
    /// Simulate a plan and its purchasing policy.
    Simulate(SimulateArgs),
    /// Step-by-step plan versus the penalty line search.
    Search(SearchArgs),
    /// Score a grid of penalty pairs.
    Grid(GridArgs),
    /// Re-run the line search over a supply or demand multiplier.
    Sweep(SweepArgs),
    /// Tabulate stored search results.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Instance file (JSON).
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Config file (JSON); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct MdpOpts {
    /// Inventory grid step of the MDP.
    #[arg(long)]
    pub step: Option<i64>,
    /// Probability mass cut from each outflow tail.
    #[arg(long)]
    pub tail_mass: Option<f64>,
    /// Span stopping tolerance of value iteration.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EtaOpts {
    #[arg(long)]
    pub eta1: Option<f64>,
    #[arg(long)]
    pub eta2: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct LineOpts {
    /// Increment per parameter: one value for both, or `eta1,eta2`.
    #[arg(long, value_delimiter = ',')]
    pub zeta: Option<Vec<f64>>,
    /// Upper bound per parameter: one value for both, or `eta1,eta2`.
    #[arg(long, value_delimiter = ',')]
    pub ub: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UncertaintyArg {
    L,
    H,
}

impl From<UncertaintyArg> for Uncertainty {
    fn from(u: UncertaintyArg) -> Self {
        match u {
            UncertaintyArg::L => Uncertainty::L,
            UncertaintyArg::H => Uncertainty::H,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of customers.
    #[arg(long)]
    pub n: Option<usize>,
    /// Periods per cycle.
    #[arg(long = "T")]
    pub cycle: Option<usize>,
    #[arg(long, value_enum)]
    pub uncertainty: Option<UncertaintyArg>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub eta: EtaOpts,
}

#[derive(Debug, Clone, Args)]
pub struct MdpArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub eta: EtaOpts,
    #[command(flatten)]
    pub mdp: MdpOpts,
    /// Plan to price instead of solving at `--eta1/--eta2` (a `solve` output).
    #[arg(long)]
    pub selection: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Aggregate,
    Full,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Aggregate => Mode::Aggregate,
            ModeArg::Full => Mode::Full,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub eta: EtaOpts,
    #[command(flatten)]
    pub mdp: MdpOpts,
    #[arg(long)]
    pub selection: Option<PathBuf>,
    /// Measured periods over all replications.
    #[arg(long)]
    pub periods: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Cut negative customer orders to zero (full model).
    #[arg(long)]
    pub clamp_orders: bool,
    /// Periods of the first replication written to trace.csv.
    #[arg(long, default_value_t = 0)]
    pub trace: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mdp: MdpOpts,
    #[command(flatten)]
    pub line: LineOpts,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mdp: MdpOpts,
    /// Comma-separated `eta1` values.
    #[arg(long, value_delimiter = ',')]
    pub grid_eta1: Option<Vec<f64>>,
    /// Comma-separated `eta2` values.
    #[arg(long, value_delimiter = ',')]
    pub grid_eta2: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    #[value(name = "m_s")]
    Ms,
    #[value(name = "m_p")]
    Mp,
    #[value(name = "m_d")]
    Md,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mdp: MdpOpts,
    #[command(flatten)]
    pub line: LineOpts,
    #[arg(long, value_enum)]
    pub which: Option<Which>,
    #[arg(long)]
    pub from: Option<f64>,
    #[arg(long)]
    pub to: Option<f64>,
    #[arg(long)]
    pub step_mult: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// `search.json` files written by `search`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure category, printed as `kind`; each maps to its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    BadConfig,
    UnresolvedPath,
    InfeasibleInstance,
    Solver,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::BadConfig => "bad_config",
            Kind::UnresolvedPath => "unresolved_path",
            Kind::InfeasibleInstance => "infeasible_instance",
            Kind::Solver => "solver",
        }
    }

    fn code(self) -> u8 {
        match self {
            Kind::Solver => 1,
            Kind::BadConfig => 2,
            Kind::UnresolvedPath => 3,
            Kind::InfeasibleInstance => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: Kind::BadConfig, message: message.into() }
    }

    pub fn path(message: impl Into<String>) -> Self {
        Self { kind: Kind::UnresolvedPath, message: message.into() }
    }
}

impl From<scirp::Error> for CliError {
    fn from(e: scirp::Error) -> Self {
        use scirp::Error as E;
        let kind = match &e {
            E::InvalidInstance(_) | E::Uncovered(_) | E::Probability(_) => Kind::InfeasibleInstance,
            E::InvalidArgument(_) | E::Parse(_) | E::Json(_) => Kind::BadConfig,
            E::Io(_) => Kind::UnresolvedPath,
            _ => Kind::Solver,
        };
        Self { kind, message: e.to_string() }
    }
}

fn fail(e: CliError) -> ExitCode {
    let obj = json!({ "error": { "kind": e.kind.name(), "message": e.message } });
    eprintln!("{obj}");
    ExitCode::from(e.kind.code())
}

/// Sizes the global thread pool from `SCIRP_THREADS`; unset means all cores.
fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("SCIRP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config(format!("SCIRP_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(CliError::config(e.to_string().trim_end())),
    };
    if let Err(e) = init_threads() {
        return fail(e);
    }
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Clusters(a) => commands::clusters(a),
        Command::Solve(a) => commands::solve(a),
        Command::Mdp(a) => commands::mdp(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Search(a) => commands::search(a),
        Command::Grid(a) => commands::grid(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(summary) => {
            // A closed pipe downstream is not a failure of the run.
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}
