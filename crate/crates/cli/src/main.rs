//! `ate`: train, evaluate, sweep and compare adversarial triplet
//! embeddings. Exit codes: 0 success, 2 usage or configuration error, 3
//! numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ate_cli::commands::{
    cmd_compare, cmd_eval, cmd_gen_data, cmd_sweep_eps, cmd_train, CliError, DEFAULT_EPS_GRID,
};
use ate_cli::config::resolve_config;

#[derive(Parser)]
#[command(
    name = "ate",
    version,
    about = "Adversarial triplet embedding experiments"
)]
struct Cli {
    /// Experiment config file (flat `key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Run with this single seed, replacing the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, replacing the configured one.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Config override, repeatable (e.g. --override train.epochs=5).
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per configured seed.
    Train,
    /// Evaluate a checkpoint on the configured test split.
    Eval {
        /// Checkpoint file written by `train`.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Train and evaluate the ATE loss across a perturbation-radius grid.
    SweepEps {
        /// Comma-separated radii; defaults to the published seven-value
        /// grid.
        #[arg(long, value_delimiter = ',', value_name = "EPS,...")]
        eps: Vec<String>,
    },
    /// Train several losses under identical seeds, data and mining.
    Compare {
        /// Comma-separated loss names (hinge, softplus, ate, gaussian-map).
        #[arg(long, value_delimiter = ',', value_name = "LOSS,...")]
        losses: Vec<String>,
    },
    /// Generate the configured synthetic dataset and write it to disk.
    GenData,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive here too; they are not errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    let cfg = match resolve_config(
        cli.config.as_deref(),
        &cli.overrides,
        cli.seed,
        cli.out.as_deref(),
    ) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let result: Result<(), CliError> = match &cli.command {
        Command::Train => cmd_train(&cfg).map(|_| ()),
        Command::Eval { checkpoint } => cmd_eval(&cfg, checkpoint).map(|_| ()),
        Command::SweepEps { eps } => parse_grid(eps)
            .and_then(|grid| cmd_sweep_eps(&cfg, &grid))
            .map(|_| ()),
        Command::Compare { losses } => cmd_compare(&cfg, losses).map(|_| ()),
        Command::GenData => cmd_gen_data(&cfg).map(|_| ()),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Parses `--eps` labels, falling back to the published grid when none are
/// given. Labels are kept verbatim for the output CSV.
fn parse_grid(eps: &[String]) -> Result<Vec<(f64, String)>, CliError> {
    if eps.is_empty() {
        return Ok(DEFAULT_EPS_GRID
            .iter()
            .map(|(v, s)| (*v, s.to_string()))
            .collect());
    }
    eps.iter()
        .map(|label| {
            label
                .parse::<f64>()
                .map(|v| (v, label.clone()))
                .map_err(|e| CliError::Usage(format!("bad epsilon {label:?}: {e}")))
        })
        .collect()
}
