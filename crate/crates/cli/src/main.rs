//! `oasis`: generate graphs, build designs, estimate effects and run simulations.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oasis_core::Error;

#[derive(Parser, Debug)]
#[command(name = "oasis", version, about = "Experiment design and reweighted estimation under network interference")]
struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a clustered graph with simulation attributes and two arms.
    GenGraph(GenGraphArgs),
    /// Draw a partition and optimize the design weights.
    Design(DesignArgs),
    /// Simulate the responses of running a design on a generated graph.
    Observe(ObserveArgs),
    /// Reweighted arm means with bootstrap intervals.
    Estimate(EstimateArgs),
    /// Repeated design-and-estimate runs against cluster randomization.
    Simulate(SimulateArgs),
    /// Score boost factors that realize a design in a score-and-normalize ranker.
    Boost(BoostArgs),
    /// Box plots and coverage chart from simulation results.
    Report(ReportArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, env = "OASIS_SEED")]
    seed: Option<u64>,
}

/// Graph inputs. `--graph` may be a directory holding `graph.tsv`,
/// `nodes.tsv` and `treatments.tsv`, or the edge file itself.
#[derive(Args, Debug, Default)]
struct GraphInput {
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Defaults to `nodes.tsv` next to the edge file.
    #[arg(long)]
    nodes: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenGraphArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    cluster_size: Option<usize>,
    #[arg(long)]
    d_ba: Option<f64>,
    #[arg(long)]
    d_er: Option<f64>,
    #[arg(long)]
    ba_power: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DesignArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: GraphInput,
    /// Defaults to `treatments.tsv` next to the edge file.
    #[arg(long)]
    treatments: Option<PathBuf>,
    /// Use this partition instead of drawing one.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Measurement-arm fraction per arm, comma separated.
    #[arg(long, value_delimiter = ',')]
    frac_omega: Option<Vec<f64>>,
    /// Shadow-arm fraction per arm, comma separated.
    #[arg(long, value_delimiter = ',')]
    frac_lambda: Option<Vec<f64>>,
    /// Exposure-set inclusion probability.
    #[arg(long)]
    q: Option<f64>,
    /// Draw the exposure set as a random node set of this fraction.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    r_min: Option<f64>,
    #[arg(long)]
    r_max: Option<f64>,
    #[arg(long)]
    s_min: Option<f64>,
    #[arg(long)]
    s_max: Option<f64>,
    #[arg(long)]
    k_blocks: Option<usize>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// Pick the block count to give about this many consumers per block.
    #[arg(long)]
    consumers_per_block: Option<usize>,
    /// Affinity assumed by the design instead of the graph's.
    #[arg(long)]
    alpha_override: Option<f64>,
    /// Design TSV; the partition, objective trace and resolved config are
    /// written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ObserveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: GraphInput,
    #[arg(long)]
    design: Option<PathBuf>,
    /// Defaults to the partition written next to the design.
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Output directory for exposures, target samples and responses.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: GraphInput,
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Producer exposures (`node arm z_star`).
    #[arg(long)]
    exposures: Option<PathBuf>,
    /// Target samples (`src dst arm z`).
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Responses (`node y`).
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight clip; 0 disables clipping.
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long, value_parser = ["plain", "self_normalized"])]
    mode: Option<String>,
    #[arg(long, value_parser = ["kde", "gaussian"])]
    density: Option<String>,
    /// Report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    cluster_size: Option<usize>,
    #[arg(long)]
    d_ba: Option<f64>,
    #[arg(long)]
    d_er: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    consumers_per_block: Option<usize>,
    /// Make the treatment equal to the control.
    #[arg(long)]
    identical_arms: bool,
    #[arg(long, value_delimiter = ',', value_parser = ["oasis", "cb"])]
    methods: Option<Vec<String>>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Also write `results.svg` and `coverage.svg`.
    #[arg(long)]
    svg: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BoostArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: GraphInput,
    #[arg(long)]
    design: Option<PathBuf>,
    /// Defaults to the partition written next to the design.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Boost table TSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Results CSV, one per panel.
    #[arg(long, num_args = 1..)]
    results: Vec<PathBuf>,
    /// Panel labels, one per results file; defaults to the file stems.
    #[arg(long, num_args = 1..)]
    labels: Vec<String>,
    #[arg(long)]
    columns: Option<usize>,
    /// Nominal coverage drawn on the coverage chart.
    #[arg(long)]
    nominal: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{module}: {source}")]
    Module {
        module: &'static str,
        #[source]
        source: Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Module { source, .. } => match source {
                Error::Parameter(_) | Error::Parse { .. } | Error::Graph(_) | Error::Input(_) | Error::Config(_) => 1,
                _ => 2,
            },
        }
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
}

/// Simulation uses the requested pool; everything else runs on one thread.
fn init_threads(command: &Command) -> Result<(), CliError> {
    let threads = match command {
        Command::Simulate(args) => args.threads.unwrap_or(0),
        _ => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads(&cli.command)?;
    match cli.command {
        Command::GenGraph(args) => commands::gen_graph(args),
        Command::Design(args) => commands::design(args),
        Command::Observe(args) => commands::observe(args),
        Command::Estimate(args) => commands::estimate(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Boost(args) => commands::boost(args),
        Command::Report(args) => commands::report(args),
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
    init_logging(cli.verbose, cli.quiet);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
