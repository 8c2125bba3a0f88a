use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use effhyp::cli::{parse_config, run, validate, Command, Profile, RunOptions};

#[derive(Parser)]
#[command(name = "effhyp", version, about = "Checks and simulations for third-order effectively hyperbolic operators")]
struct Args {
    #[command(subcommand)]
    action: Action,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = Profile::Theory)]
    profile: Profile,
}

#[derive(Subcommand)]
enum Action {
    Analyze(Common),
    VerifyDiscriminant(Common),
    VerifyBezout(Common),
    VerifyWeights(Common),
    Solve(Common),
    LossSweep(Common),
    /// Report every problem in a config file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn read(path: &PathBuf) -> Result<String, ExitCode> {
    std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (command, common) = match args.action {
        Action::Validate { config } => {
            let text = match read(&config) {
                Ok(t) => t,
                Err(c) => return c,
            };
            let diags = validate(&text);
            for d in &diags {
                eprintln!("{}: {d}", config.display());
            }
            return if diags.is_empty() {
                println!("{}: ok", config.display());
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
        Action::Analyze(c) => (Command::Analyze, c),
        Action::VerifyDiscriminant(c) => (Command::VerifyDiscriminant, c),
        Action::VerifyBezout(c) => (Command::VerifyBezout, c),
        Action::VerifyWeights(c) => (Command::VerifyWeights, c),
        Action::Solve(c) => (Command::Solve, c),
        Action::LossSweep(c) => (Command::LossSweep, c),
    };
    let text = match read(&common.config) {
        Ok(t) => t,
        Err(c) => return c,
    };
    let config = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if config.command != command {
        eprintln!(
            "error: config is for '{}' but '{}' was requested",
            config.command.name(),
            command.name()
        );
        return ExitCode::from(1);
    }
    let out = common
        .out
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let opts = RunOptions {
        out: out.clone(),
        threads: common.threads,
        profile: common.profile,
    };
    match run(&config, &opts) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{}: {} rows, {} violations, written to {}",
                command.name(),
                outcome.rows.len(),
                outcome.violations.len(),
                out.display()
            );
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
