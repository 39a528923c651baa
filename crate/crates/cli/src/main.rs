use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crossdiff::commands::output_dir;
use crossdiff::{
    cmd_check, cmd_equilibrium, cmd_refine_tau, cmd_run, cmd_sweep_m, parse_config, CliError, Options, Outcome,
};

/// Minimizing-movement solver for two-species degenerate cross-diffusion.
///
/// Exit status: 0 all hard checks passed, 1 a hard check failed,
/// 2 configuration error, 3 I/O or solver failure.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run specification.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output (or, for `check`, run) directory; overrides outputs.directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run the trajectory and write diagnostics.
    Run,
    /// Compute the equilibrium of the model's masses (finite m).
    Equilibrium,
    /// Run the m-sweep of studies.m_sweep.
    SweepM,
    /// Run the time-step refinement of studies.tau_refinement.
    RefineTau,
    /// Re-validate an existing run directory.
    Check,
}

fn config_path(cli: &Cli) -> Result<&Path, CliError> {
    cli.config.as_deref().ok_or_else(|| {
        CliError::Config(crossdiff::ConfigError {
            key: String::new(),
            message: "--config <path> is required".into(),
        })
    })
}

fn report(outcome: &Outcome, quiet: bool) {
    if quiet {
        return;
    }
    for c in &outcome.manifest.checks {
        let tag = if c.passed { "ok  " } else if c.hard { "FAIL" } else { "warn" };
        println!("{tag} {}", c.name);
    }
    if let Some(e) = &outcome.manifest.error {
        println!("error: {e}");
    }
    println!("status: {:?}, output in {}", outcome.manifest.status, outcome.dir.display());
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let opts = Options { quiet: cli.quiet };
    if let Command::Check = cli.command {
        let dir = match (&cli.out, &cli.config) {
            (Some(d), _) => d.clone(),
            (None, Some(c)) => output_dir(&parse_config(c)?, None)?,
            (None, None) => PathBuf::from("."),
        };
        let rep = cmd_check(&dir, opts)?;
        if !cli.quiet {
            for c in &rep.checks {
                let tag = if c.passed { "ok  " } else if c.hard { "FAIL" } else { "warn" };
                println!("{tag} {}{}", c.name, if c.detail.is_empty() { String::new() } else { format!(" ({})", c.detail) });
            }
        }
        return Ok(rep.exit_code());
    }
    let spec = parse_config(config_path(cli)?)?;
    let out = output_dir(&spec, cli.out.as_deref())?;
    let outcome = match cli.command {
        Command::Run => cmd_run(&spec, &out, opts)?,
        Command::Equilibrium => cmd_equilibrium(&spec, &out, opts)?,
        Command::SweepM => cmd_sweep_m(&spec, &out, opts)?,
        Command::RefineTau => cmd_refine_tau(&spec, &out, opts)?,
        Command::Check => unreachable!(),
    };
    report(&outcome, cli.quiet);
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = execute(&cli).unwrap_or_else(|e| {
        eprintln!("crossdiff: {e}");
        e.exit_code()
    });
    ExitCode::from(code as u8)
}
