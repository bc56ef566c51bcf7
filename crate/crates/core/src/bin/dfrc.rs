use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dfrc_core::harness::{beampattern_experiment, run_experiment, write_results, ExperimentSpec};
use dfrc_core::Error;

/// Hybrid beamforming experiments for dual-function radar-communication.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte-Carlo sweep and write result files.
    Run {
        #[command(flatten)]
        common: Common,
        /// Trials per sweep point (overrides the file).
        #[arg(long)]
        trials: Option<usize>,
        /// Exit with status 3 when any trial misses its constraints.
        #[arg(long)]
        strict: bool,
    },
    /// Solve the first trial of each point and write beampatterns.
    Beampattern {
        #[command(flatten)]
        common: Common,
    },
    /// Check an experiment file and print the resolved settings.
    Validate {
        spec: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    spec: PathBuf,
    /// Master seed (overrides the file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

fn load(common: &Common, trials: Option<usize>) -> Result<(ExperimentSpec, PathBuf), Error> {
    let mut spec = ExperimentSpec::load(&common.spec)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    if let Some(t) = trials {
        spec.trials = t;
    }
    spec.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| spec.output.clone())
        .unwrap_or_else(|| Path::new("results").join(&spec.name));
    Ok((spec, out))
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run { common, trials, strict } => {
            let (spec, out) = load(&common, trials)?;
            let res = run_experiment(&spec, common.threads)?;
            let files = write_results(&res, &out)?;
            println!("{:>12} {:>4} {:>6} {:>10} {:>10} {:>10}", spec.sweep.variable.as_str(), "arch", "ok", "rate", "scnr", "outer");
            for s in &res.summary {
                println!(
                    "{:>12} {:>4} {:>3}/{:<2} {:>10.4} {:>10.4} {:>10.2}",
                    s.sweep_value, s.architecture.to_string(), s.feasible, s.trials, s.sum_rate.0, s.scnr.0, s.outer_iterations.0
                );
            }
            println!("wrote {} ({} trials, {:.1} s)", files.results.display(), res.records.len(), res.wall_time);
            let bad = res.infeasible_trials();
            if bad > 0 {
                eprintln!("{bad} trial(s) missed the SCNR target or power budget");
                if strict {
                    return Ok(EXIT_INFEASIBLE);
                }
            }
            Ok(0)
        }
        Command::Beampattern { common } => {
            let (spec, out) = load(&common, None)?;
            for p in beampattern_experiment(&spec, &out, common.threads)? {
                println!("wrote {}", p.display());
            }
            Ok(0)
        }
        Command::Validate { spec } => {
            let spec = ExperimentSpec::load(&spec)?;
            println!("{}: ok", spec.name);
            println!("  sweep {} over {} point(s)", spec.sweep.variable.as_str(), spec.sweep.points.len());
            let archs: Vec<String> = spec.architectures.iter().map(|a| a.to_string()).collect();
            println!("  architectures {}", archs.join(", "));
            println!("  trials {} seed {}", spec.trials, spec.seed);
            println!("  config hash {}", spec.config_hash());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
