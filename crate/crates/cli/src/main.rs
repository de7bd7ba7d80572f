use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dopo_qb::experiment::{exit_code, execute, lint, Experiment, ExperimentConfig, RunCache, OUTPUT_DIR_ENV};
use dopo_qb::Error;

/// Exit status when `--check` is set and a target is missed.
const EXIT_CHECK_MISS: u8 = 4;

#[derive(Parser)]
#[command(name = "dopo-qb", version, about = "DOPO quantum battery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV, summary and manifest files.
    Run {
        experiment: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides the environment and the config file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 4 if any acceptance target is missed.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config file and print physics diagnostics.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the experiment catalog.
    List,
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e) as u8)
}

fn run(experiment: &str, config: Option<PathBuf>, out: Option<PathBuf>, check: bool, threads: Option<usize>) -> ExitCode {
    let experiment: Experiment = match experiment.parse() {
        Ok(e) => e,
        Err(e) => return fail(&e),
    };
    let mut cfg = match config {
        Some(path) => match ExperimentConfig::load(&path) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        },
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = out {
        cfg.output_dir = dir;
    } else if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
        cfg.output_dir = PathBuf::from(dir);
    }
    if let Some(n) = threads {
        cfg.threads = n;
    }
    cfg.experiment = Some(experiment);

    let outcome = match execute(&cfg, experiment, &RunCache::new()) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    for c in &outcome.checks {
        println!(
            "{} {}: {:.6} (target {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.target
        );
    }
    println!("wrote {} files to {}", outcome.files.len(), outcome.dir.display());
    if check && !outcome.passed() {
        return ExitCode::from(EXIT_CHECK_MISS);
    }
    ExitCode::SUCCESS
}

fn validate(path: PathBuf) -> ExitCode {
    match ExperimentConfig::load(&path) {
        Ok(cfg) => {
            let warnings = lint(&cfg);
            for w in &warnings {
                println!("warning: {w}");
            }
            if warnings.is_empty() {
                println!("ok");
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { experiment, config, out, check, threads } => run(&experiment, config, out, check, threads),
        Command::Validate { config } => validate(config),
        Command::List => {
            for e in Experiment::ALL {
                println!("{:<7} {}", e.name(), e.description());
            }
            ExitCode::SUCCESS
        }
    }
}
