//! `uhash`: build, query, evaluate and benchmark uncertainty-aware hash codebooks.
//!
//! Exit codes: 0 success, 1 usage or unreadable/unwritable file, 2 invalid
//! input, 3 internal invariant violation.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use uhash::query::{QueryParams, SearchMode};
use uhash::Weight;

#[derive(Parser, Debug)]
#[command(name = "uhash", version, about = "Uncertainty-aware binary hash retrieval")]
struct Cli {
    /// Worker threads. Defaults to 1 for `build` and all cores elsewhere.
    #[arg(long, global = true, env = "UHASH_THREADS")]
    threads: Option<usize>,

    /// Print timings and extra detail to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a codebook from a trace file.
    Build(BuildArgs),
    /// Rank codebook entries for query traces.
    Query(QueryArgs),
    /// mAP@K of query traces against a codebook.
    Eval(EvalArgs),
    /// mAP@K over a grid of gamma, theta and k_bs.
    Sweep(SweepArgs),
    /// Write synthetic database and query trace files.
    Synth(SynthArgs),
    /// Measure query throughput.
    Bench(BenchArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Database trace file.
    #[arg(long)]
    pub traces: PathBuf,
    /// Output codebook path.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Weight of primary over secondary uncertainty.
    #[arg(long, default_value = "0.5")]
    pub theta: Weight,
    /// Bits flagged as uncertain per entry.
    #[arg(long)]
    pub k_bs: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    /// Discount applied to conflicts on flagged bits.
    #[arg(long, default_value = "0.75")]
    pub gamma: Weight,
    /// Exhaustive search, decoding every mask.
    #[arg(long, conflicts_with_all = ["k_prime", "no_expansion"])]
    pub exact: bool,
    /// Initial candidate pool of the filtered search.
    #[arg(long)]
    pub k_prime: Option<usize>,
    /// Keep the pool fixed at K' even when that may miss true neighbors.
    #[arg(long)]
    pub no_expansion: bool,
}

impl SearchArgs {
    pub fn params(&self, k: usize) -> QueryParams {
        let mut p = QueryParams::new(self.gamma, k);
        p.k_prime = self.k_prime;
        if self.exact {
            p.mode = SearchMode::Exact;
        }
        p.safety_expansion = !self.no_expansion;
        p
    }
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    /// Query trace file; secondary hashes are used.
    #[arg(long)]
    pub traces: PathBuf,
    /// Only query these clip ids.
    #[arg(long = "clip")]
    pub clips: Vec<String>,
    /// Results per timestep.
    #[arg(short, long, default_value_t = 10)]
    pub k: usize,
    /// 1-based timesteps to query at.
    #[arg(long, value_delimiter = ',', conflicts_with = "levels")]
    pub at: Vec<usize>,
    /// Observation levels; timestep is ceil(level * T).
    #[arg(long, value_delimiter = ',', default_value = "1/3,2/3,1")]
    pub levels: Vec<Weight>,
    /// Never return the entry sharing the query's clip id.
    #[arg(long)]
    pub exclude_self: bool,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    /// Labeled query trace file.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1/3,2/3,1")]
    pub levels: Vec<Weight>,
    /// Rank by plain Hamming distance, ignoring masks.
    #[arg(long, conflicts_with_all = ["exact", "k_prime", "no_expansion"])]
    pub plain: bool,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Database trace file; one codebook is built per (theta, k_bs).
    #[arg(long)]
    pub database: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub gammas: Vec<Weight>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub thetas: Vec<Weight>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub k_bs: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1/3,2/3,1")]
    pub levels: Vec<Weight>,
    #[arg(long, conflicts_with_all = ["k_prime", "no_expansion"])]
    pub exact: bool,
    #[arg(long)]
    pub k_prime: Option<usize>,
    #[arg(long)]
    pub no_expansion: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output path for database traces.
    #[arg(long)]
    pub database: PathBuf,
    /// Output path for query traces.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub clips_per_class: Option<usize>,
    #[arg(long)]
    pub queries_per_class: Option<usize>,
    /// Hash width in bits.
    #[arg(long)]
    pub d: Option<usize>,
    /// Timesteps per clip.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub centroid_distance: Option<f64>,
    #[arg(long)]
    pub clip_noise: Option<f64>,
    #[arg(long)]
    pub unstable_bits: Option<usize>,
    #[arg(long)]
    pub instability_rate: Option<f64>,
    #[arg(long)]
    pub secondary_lag: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["codebook", "random"])))]
pub struct BenchArgs {
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    /// Benchmark a random codebook of this many entries.
    #[arg(long)]
    pub random: Option<usize>,
    /// Width of the random codebook.
    #[arg(long, default_value_t = 128, requires = "random")]
    pub d: usize,
    /// Flagged bits of the random codebook.
    #[arg(long, default_value_t = 16, requires = "random")]
    pub k_bs: usize,
    /// Number of random queries.
    #[arg(long, default_value_t = 100)]
    pub queries: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(short, long, default_value_t = 10)]
    pub k: usize,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

pub struct Context {
    pub verbose: bool,
}

fn init_threads(threads: Option<usize>, command: &Command) -> Result<(), commands::CliError> {
    let n = match (threads, command) {
        (Some(n), _) => n,
        (None, Command::Build(_)) => 1,
        (None, _) => return Ok(()),
    };
    if n == 0 {
        return Err(commands::CliError::Usage("--threads must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| commands::CliError::Usage(e.to_string()))
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
    let ctx = Context { verbose: cli.verbose };
    let result = init_threads(cli.threads, &cli.command).and_then(|()| match &cli.command {
        Command::Build(a) => commands::build(a, &ctx),
        Command::Query(a) => commands::query(a, &ctx),
        Command::Eval(a) => commands::eval(a, &ctx),
        Command::Sweep(a) => commands::sweep(a, &ctx),
        Command::Synth(a) => commands::synth(a, &ctx),
        Command::Bench(a) => commands::bench(a, &ctx),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code())
        }
    }
}
