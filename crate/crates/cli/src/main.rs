//! `um`: generate programs, train marginalisers, query them, and run the
//! correlation benchmark.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or validation error,
//! 4 numeric failure. `UM_THREADS` sets the worker thread count.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "um",
    version,
    about = "Universal marginaliser for bounded probabilistic programs"
)]
struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded benchmark graph (chain, grid, star) or the probprog program.
    GenGraph(GenGraphArgs),
    /// Train a marginaliser on a program file and write a checkpoint.
    Train(TrainArgs),
    /// Query a trained checkpoint.
    Infer(InferArgs),
    /// Exact marginals by enumeration.
    Oracle(OracleArgs),
    /// Train and score the (graph, mode, preset) grid; writes a CSV report.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
struct GenGraphArgs {
    /// chain, grid, star or probprog (or a combined name like `grid16`).
    family: String,
    /// Node count; grids must be square.
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Program JSON file.
    program: PathBuf,
    /// Checkpoint output path.
    #[arg(short, long)]
    out: PathBuf,
    /// Architecture preset 1, 2 or 3.
    #[arg(long, conflicts_with_all = ["hidden", "width"])]
    preset: Option<u8>,
    /// Hidden layer count (with --width, instead of --preset).
    #[arg(long, requires = "width")]
    hidden: Option<usize>,
    /// Hidden layer width.
    #[arg(long, requires = "hidden")]
    width: Option<usize>,
    #[arg(long, default_value = "relu")]
    activation: String,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// standard or flex.
    #[arg(long, default_value = "standard")]
    mode: String,
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    #[arg(long, default_value_t = 512)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prior samples used for the masking statistics.
    #[arg(long, default_value_t = um_core::masking::DEFAULT_PRIOR_SAMPLES)]
    prior_samples: usize,
    /// Log losses every this many iterations.
    #[arg(long, default_value_t = 100)]
    log_every: usize,
    /// Per-head loss CSV; a `.summed.csv` sibling gets the summed loss.
    /// Defaults to the checkpoint path with a `.loss.csv` suffix.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Direct,
    GuideIs,
    PriorIs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Args, Debug)]
struct EvidenceArgs {
    /// Evidence as JSON, e.g. '{"X1": 1}'.
    #[arg(long, conflicts_with = "evidence_file")]
    evidence: Option<String>,
    /// Evidence JSON file.
    #[arg(long)]
    evidence_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Checkpoint JSON file.
    checkpoint: PathBuf,
    #[command(flatten)]
    evidence: EvidenceArgs,
    #[arg(long, value_enum, default_value = "direct")]
    method: Method,
    /// Sample count for the importance-sampling methods.
    #[arg(short = 'n', long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Continuous proposal std as a multiple of the prior std.
    #[arg(long, default_value_t = 0.5)]
    sigma_factor: f64,
    /// Uniform mixing weight for categorical proposals.
    #[arg(long, default_value_t = 1e-3)]
    floor: f64,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Program JSON file.
    program: PathBuf,
    #[command(flatten)]
    evidence: EvidenceArgs,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Comma-separated graph names (default: the eight benchmark graphs).
    #[arg(long, value_delimiter = ',')]
    graphs: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "standard,flex")]
    modes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    presets: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    #[arg(long, default_value_t = 512)]
    batch: usize,
    /// Test queries per graph.
    #[arg(long, default_value_t = um_core::evaluation::DEFAULT_QUERIES)]
    queries: usize,
    /// Likelihood-weighting samples for ground truth on large graphs.
    #[arg(long, default_value_t = um_core::evaluation::DEFAULT_IS_SAMPLES)]
    is_samples: usize,
    #[arg(long, default_value_t = um_core::masking::DEFAULT_PRIOR_SAMPLES)]
    prior_samples: usize,
    /// Fill the seconds column (makes the CSV run-dependent).
    #[arg(long)]
    timing: bool,
    /// CSV output path; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(e) = commands::init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
