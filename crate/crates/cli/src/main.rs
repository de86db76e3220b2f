//! `acctl` — sparse optimal control of an Allen-Cahn system with dynamic
//! boundary conditions, from declarative configs.
//!
//! Exit codes: 0 on success, 1 on validation errors (arguments, config,
//! infeasible data), 2 when a solver fails on a well-posed problem.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use ac_control_cli::{parse_config, run, CliError, RunContext, SubcommandKind};

#[derive(Parser)]
#[command(
    name = "acctl",
    version,
    about = "Sparse optimal control of an Allen-Cahn system with dynamic boundary conditions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the `section.key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the result bundle (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Seed for every random draw of the subcommand.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for sweep entries (other subcommands are sequential).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the state system for the configured control.
    SolveState(RunArgs),
    /// Run the proximal-gradient optimizer and audit the result.
    Optimize(RunArgs),
    /// Finite-difference tables for the gradient and the second form.
    CheckGradient(RunArgs),
    /// Second-order probes at a converged control: coercivity sampling,
    /// Taylor remainders, growth ratios, continuity tables.
    CheckSoc(RunArgs),
    /// Optimize over a list of sparsity weights and report support measures.
    SweepAlpha(RunArgs),
    /// Numerical audit of the modelling assumptions (A1)-(A7).
    AuditAssumptions(RunArgs),
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let (kind, args) = match command {
        Command::SolveState(a) => (SubcommandKind::SolveState, a),
        Command::Optimize(a) => (SubcommandKind::Optimize, a),
        Command::CheckGradient(a) => (SubcommandKind::CheckGradient, a),
        Command::CheckSoc(a) => (SubcommandKind::CheckSoc, a),
        Command::SweepAlpha(a) => (SubcommandKind::SweepAlpha, a),
        Command::AuditAssumptions(a) => (SubcommandKind::AuditAssumptions, a),
    };
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::Config {
        line: None,
        message: format!("cannot read config {}: {e}", args.config.display()),
    })?;
    let config = parse_config(&text)?;
    let ctx = RunContext {
        config,
        out: args.out,
        seed: args.seed,
        threads: args.threads,
    };
    run(kind, &ctx)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are successful outcomes; everything else
            // is an invocation error and exits like a validation failure.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
