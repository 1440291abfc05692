//! `tensorcf`: estimate relative treatment effects on count panels and run
//! the simulation studies.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tensorcf_io::IoError;

#[derive(Debug, Parser)]
#[command(name = "tensorcf", version, about = "Counterfactual imputation for count panels")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for reports; created if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct PanelArgs {
    /// Panel CSV; overrides `data` in the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated method labels; overrides `methods` in the config.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured methods and write the comparison table.
    Fit(PanelArgs),
    /// Cross-validation error along the λ grid for the completion methods.
    Cv(PanelArgs),
    /// Residual-permutation bootstrap intervals for the completion methods.
    Bootstrap {
        #[command(flatten)]
        panel: PanelArgs,
        /// Replications; overrides `bootstrap_reps`.
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Monte-Carlo comparison on simulated panels.
    Simulate {
        /// Scenarios to run (S1, S2, S3); comma-separated.
        #[arg(long, value_delimiter = ',')]
        scenario: Vec<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Masked-cell error as the number of outcomes grows.
    Rate {
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        k_grid: Vec<usize>,
        #[arg(long)]
        noise_sd: Option<f64>,
    },
}

fn exit_code(e: &IoError) -> u8 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tensorcf_causal::CausalError;

    #[test]
    fn numerical_failures_exit_with_two() {
        assert_eq!(exit_code(&IoError::Causal(CausalError::Numerical("svd".into()))), 2);
        assert_eq!(exit_code(&IoError::Causal(CausalError::Input("shape".into()))), 1);
        assert_eq!(exit_code(&IoError::Parse { line: 3, message: "x".into() }), 1);
    }
}
