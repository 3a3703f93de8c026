use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fraccal::commands::{self, Command};
use fraccal::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "fraccal", version, about = "Exterior inverse problems for fractional Schrodinger-type operators")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Solve the exterior value problem for one datum.
    Forward,
    /// Assemble the DN matrix and its adjoint over the dictionaries.
    Dn,
    /// Check the integral identity on random operator pairs.
    Alessandrini,
    /// Runge approximation of a bump over nested dictionaries.
    Runge,
    /// Recover mollified coefficients from synthesized DN data.
    Recover,
    /// Run the verification suites.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    let mut config = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let command = match cli.command {
        Cmd::Forward => Command::Forward,
        Cmd::Dn => Command::Dn,
        Cmd::Alessandrini => Command::Alessandrini,
        Cmd::Runge => Command::Runge,
        Cmd::Recover => Command::Recover,
        Cmd::Verify => Command::Verify,
    };
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let result = commands::run(command, &config, &base, &cli.out);
    match &result {
        Ok(o) => {
            for w in &o.warnings {
                eprintln!("warning: {w}");
            }
            for m in &o.messages {
                println!("{m}");
            }
            for f in &o.files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(commands::exit_code(&result) as u8)
}
