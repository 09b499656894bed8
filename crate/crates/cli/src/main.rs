//! Command-line front end: exact mapping moments, simulation, posterior
//! predictive checks, conservation tests and timing benchmarks.

mod commands;
mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BenchArgs, CovArgs, MomentsArgs, PpredArgs, PriorArgs, SimmapArgs, SimulateArgs, SphArgs};

#[derive(Parser, Debug)]
#[command(name = "phylomoments", version, about = "Exact moments of stochastic-mapping summaries on phylogenies")]
pub struct Cli {
    /// Worker threads; defaults to the number of available cores. One
    /// thread gives the reference serial path.
    #[arg(long, global = true, env = "PHYLOMOMENTS_THREADS")]
    threads: Option<usize>,
    /// Output file; standard output when omitted.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// More log output on standard error (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-site posterior mean and variance of a summary over a branch set.
    Moments(MomentsArgs),
    /// Per-site posterior covariance between summaries over two branch sets.
    Cov(CovArgs),
    /// Prior mean, variance and covariance (no tip data).
    Prior(PriorArgs),
    /// Simulate an alignment, optionally with scaled branch lengths.
    Simulate(SimulateArgs),
    /// Monte Carlo stochastic mapping next to the exact moments.
    Simmap(SimmapArgs),
    /// Posterior predictive rate-variation check.
    Ppred(PpredArgs),
    /// Conservation tests on an alignment, or a power study.
    Sph(SphArgs),
    /// Exact vs Monte Carlo timing across tree sizes.
    Bench(BenchArgs),
}

/// Everything a subcommand needs besides its own arguments.
pub struct Context {
    pub output: Option<PathBuf>,
    pub threads: usize,
    pub command_line: String,
}

impl Context {
    /// Header lines common to every table.
    pub fn header(&self) -> String {
        format!(
            "phylomoments {}\ncommand: {}\nthreads: {}",
            env!("CARGO_PKG_VERSION"),
            self.command_line,
            self.threads
        )
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = match cli.threads {
        Some(0) => anyhow::bail!("--threads must be at least 1"),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    let ctx = Context {
        output: cli.output,
        threads,
        command_line: std::env::args().collect::<Vec<_>>().join(" "),
    };
    log::debug!("running with {threads} thread(s)");
    match cli.command {
        Command::Moments(a) => commands::moments(&ctx, &a),
        Command::Cov(a) => commands::cov(&ctx, &a),
        Command::Prior(a) => commands::prior(&ctx, &a),
        Command::Simulate(a) => commands::simulate(&ctx, &a),
        Command::Simmap(a) => commands::simmap(&ctx, &a),
        Command::Ppred(a) => commands::ppred(&ctx, &a),
        Command::Sph(a) => commands::sph(&ctx, &a),
        Command::Bench(a) => commands::bench(&ctx, &a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("phylomoments: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
