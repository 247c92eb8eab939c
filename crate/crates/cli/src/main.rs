use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ridgewalk_cli::{configure_threads, CliResult, Command, RunConfig};

#[derive(Parser)]
#[command(name = "ridgewalk", version, about = "Find diverse solutions of differentiable games")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// SimSGD and LOLA trajectories from every grid start.
    PhasePortrait(Args),
    /// k-step exponent over a 2-D parameter grid.
    Heatmap(Args),
    /// Tune a starting point by exponent ascent.
    TuneStart(Args),
    /// Branching tree search.
    Grr(Args),
    /// Spectra of the game Hessian and the operator Jacobian at a point.
    Spectrum(Args),
    /// Normal-form classification of a point.
    Classify(Args),
    /// IPD diversity table: random-init baseline and tree searches.
    IpdTable(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `output_dir` from the configuration.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

fn execute(cli: Cli) -> CliResult<Vec<PathBuf>> {
    let (command, args) = match cli.command {
        Sub::PhasePortrait(a) => (Command::PhasePortrait, a),
        Sub::Heatmap(a) => (Command::Heatmap, a),
        Sub::TuneStart(a) => (Command::TuneStart, a),
        Sub::Grr(a) => (Command::Grr, a),
        Sub::Spectrum(a) => (Command::Spectrum, a),
        Sub::Classify(a) => (Command::Classify, a),
        Sub::IpdTable(a) => (Command::IpdTable, a),
    };
    configure_threads()?;
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    command.run(&cfg)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
