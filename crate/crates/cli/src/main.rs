use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfg_cli::config::Experiment;
use mfg_cli::pipeline::{run, RunOptions};

#[derive(Parser)]
#[command(name = "mfg", version, about = "Ground states of two-population ergodic mean-field games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 gives byte-identical output for a fixed seed.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and cache the potential-free reference problem.
    Reference(Common),
    /// Minimize the energy at one coupling.
    Solve(Common),
    /// Classify existence on a grid of couplings.
    PhaseDiagram(Common),
    /// Blow-up sweep towards attractive criticality.
    SweepAttractive(Common),
    /// Blow-up sweep towards repulsive criticality.
    SweepRepulsive(Common),
    /// Run the property suite without experiments.
    Validate(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, common) = match cli.command {
        Command::Reference(c) => (Experiment::Reference, c),
        Command::Solve(c) => (Experiment::Solve, c),
        Command::PhaseDiagram(c) => (Experiment::PhaseDiagram, c),
        Command::SweepAttractive(c) => (Experiment::SweepAttractive, c),
        Command::SweepRepulsive(c) => (Experiment::SweepRepulsive, c),
        Command::Validate(c) => (Experiment::Validate, c),
    };
    if let Some(k) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("mfg: cannot configure {k} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let opts = RunOptions { config: common.config, out: common.out, threads: common.threads, seed: common.seed };
    match run(experiment, &opts) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            let report = std::fs::read_to_string(outcome.out_dir.join("report.txt")).unwrap_or_default();
            print!("{report}");
            if experiment == Experiment::Validate && !outcome.all_passed() {
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("mfg: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
