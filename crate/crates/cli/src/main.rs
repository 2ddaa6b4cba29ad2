use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ergolab_cli::{run, CliError, Experiment, ExperimentConfig, Subcommand};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Simulate,
    Decompose,
    Split,
    Weights,
    Check,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Simulate => Subcommand::Simulate,
            Command::Decompose => Subcommand::Decompose,
            Command::Split => Subcommand::Split,
            Command::Weights => Subcommand::Weights,
            Command::Check => Subcommand::Check,
        }
    }
}

/// Entangled ergodic average experiments on finite probability spaces.
#[derive(Debug, Parser)]
#[command(name = "ergolab", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Results root; defaults to the config's output_dir, then `results`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite an existing run of the same subcommand.
    #[arg(long)]
    force: bool,
}

fn execute(args: &Args) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|source| CliError::Io {
        path: args.config.clone(),
        source,
    })?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    let exp = Experiment::build(cfg)?;
    let sub = Subcommand::from(args.command);
    let manifest = run::run(&exp, sub, &out, args.force)?;
    let dir = out.join(&manifest.config_hash);
    println!("{}", dir.display());
    let failed = manifest.failed_checks(sub);
    if !failed.is_empty() {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
