//! `navlab`: run navigation experiments from TOML configs and record them
//! as reproducible run directories.

mod commands;
mod config;
mod error;
mod record;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;
use crate::record::Summary;

#[derive(Debug, Parser)]
#[command(name = "navlab", version, about = "Navigation experiments: localization, exploration, topological labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a world and write it with a rendering.
    GenWorld(RunArgs),
    /// Evaluate localization policies over a suite of mazes.
    Localize(RunArgs),
    /// Exploration episodes, paired across policies.
    Explore(RunArgs),
    /// Object-goal search episodes.
    Objectgoal(RunArgs),
    /// Topological label dataset and a replayed graph.
    TopoLabel(RunArgs),
    /// Fit the six noise mixtures from sample files.
    FitNoise(RunArgs),
    /// Render a world file or a JSON trajectory/graph artifact to SVG.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Verify run directories and print their tables.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

type Runner = fn(Option<&Path>, u64, &Path) -> Result<Summary, CliError>;

fn run_task(args: &RunArgs, runner: Runner) -> Result<(), CliError> {
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .map_err(|e| CliError::Config(format!("workers: {e}")))?;
    let clock = Instant::now();
    let mut summary = pool.install(|| runner(args.config.as_deref(), args.seed, &args.out))?;
    summary.wall_seconds = clock.elapsed().as_secs_f64();
    summary.write(&args.out)?;
    println!("{}: wrote {}", summary.task.name(), args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenWorld(a) => run_task(&a, commands::gen_world),
        Command::Localize(a) => run_task(&a, commands::localize),
        Command::Explore(a) => run_task(&a, commands::explore),
        Command::Objectgoal(a) => run_task(&a, commands::objectgoal),
        Command::TopoLabel(a) => run_task(&a, commands::topo_label),
        Command::FitNoise(a) => run_task(&a, commands::fit_noise),
        Command::Render { input, output } => commands::render_input(&input, &output),
        Command::Report { runs } => {
            print!("{}", commands::report(&runs)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
