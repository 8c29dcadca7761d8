//! `sgns`: batch driver for the low-rank stochastic Galerkin Navier–Stokes solver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::AppError;
use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "sgns", version, about = "Low-rank stochastic Galerkin solver for Navier–Stokes flow with random viscosity")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one nonlinear solve and write its artifacts.
    Solve {
        config: PathBuf,
        /// Output directory, overriding `output.directory`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cartesian product of parameter lists and tabulate cost and ranks.
    Sweep {
        config: PathBuf,
        /// `key=v1,v2,...`; keys are cov, l, l1, l2, re0, nu0, kernel, mode, n_nu, d_max, h or `section.key`.
        #[arg(long, required = true)]
        vary: Vec<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare stochastic Galerkin moments with a Monte Carlo ensemble.
    Validate {
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_mc: usize,
        /// Probe point `x,y`; may be repeated.
        #[arg(long = "probe", value_parser = parse_probe)]
        probes: Vec<(f64, f64)>,
        /// Also solve in the other of low-rank and full-rank mode.
        #[arg(long)]
        both_modes: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const DEFAULT_PROBE: (f64, f64) = (3.6436, 0.0);

fn parse_probe(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(x)?, num(y)?))
}

fn out_dir(cfg: &RunConfig, out: Option<PathBuf>) -> PathBuf {
    let root = commands::output_root();
    match out {
        Some(o) => match &root {
            Some(r) if o.is_relative() => r.join(o),
            _ => o,
        },
        None => cfg.output_dir(root.as_deref()),
    }
}

fn run(cmd: Command) -> Result<(), AppError> {
    match cmd {
        Command::Solve { config, out } => {
            let cfg = RunConfig::load(&config)?;
            commands::cmd_solve(&cfg, &out_dir(&cfg, out))
        }
        Command::Sweep { config, vary, workers, out } => {
            let table = config::read_table(&config)?;
            let base = RunConfig::from_table(table.clone())?;
            let vary = vary.iter().map(|v| commands::parse_vary(v)).collect::<Result<Vec<_>, ConfigError>>()?;
            if workers == Some(0) {
                return Err(ConfigError::new("workers", "must be at least 1").into());
            }
            commands::cmd_sweep(&table, &vary, &out_dir(&base, out), workers)
        }
        Command::Validate {
            config,
            n_mc,
            probes,
            both_modes,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let probes = if probes.is_empty() { vec![DEFAULT_PROBE] } else { probes };
            commands::cmd_validate(&cfg, &out_dir(&cfg, out), n_mc, &probes, both_modes)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sgns: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
