//! `respac` — calibrate, certify, and stress-test noise for
//! mutual-information privacy budgets from the command line.
//!
//! Exit codes: 0 success (including flagged non-convergence), 2 config or
//! validation error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use respac_core::error::Error;

#[derive(Parser)]
#[command(name = "respac", version, about = "noise calibration for MI privacy budgets")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path; overrides the config's `out` field.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed` field.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Calibration method; overrides `calibrate.method`.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Suppress the stdout summary line.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Verb {
    /// Calibrate a noise distribution against an MI budget.
    Calibrate,
    /// Estimate the Gaussianity gap, with the oracle value when supported.
    Gap,
    /// Run the Stackelberg residual-budget solver.
    Srpac,
    /// Sweep budgets x methods into a flat table.
    Sweep,
    /// Compose residual budgets across releases.
    Compose,
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Numerical(_)
        | Error::TrainingDiverged { .. }
        | Error::QuadratureNotConverged { .. }
        | Error::SingularCovariance
        | Error::NotPositiveDefinite { .. } => 3,
        _ => 2,
    }
}

fn run(cli: &Cli) -> Result<(String, String), (u8, String)> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| (2, "--config is required".to_string()))?;
    let raw = std::fs::read_to_string(config_path)
        .map_err(|e| (2, format!("cannot read config {}: {e}", config_path.display())))?;
    let mut config: RunConfig =
        serde_json::from_str(&raw).map_err(|e| (2, format!("malformed config: {e}")))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let fail = |e: Error| (exit_code_for(&e), e.to_string());
    fn to_json<T: serde::Serialize>(v: &T) -> String {
        serde_json::to_string_pretty(v).expect("report serialization cannot fail")
    }
    let (content, summary) = match cli.verb {
        Verb::Calibrate => {
            let rep = commands::cmd_calibrate(&config, cli.method.as_deref()).map_err(fail)?;
            let s = format!(
                "calibrate method={} certified_bound={} noise_power={}",
                rep.method,
                commands::sig9(rep.certified_bound),
                commands::sig9(rep.noise_power)
            );
            (to_json(&rep) + "\n", s)
        }
        Verb::Gap => {
            let rep = commands::cmd_gap(&config).map_err(fail)?;
            let s = format!(
                "gap method={} value={} oracle_valid={:?}",
                rep.method,
                commands::sig9(rep.value),
                rep.oracle_valid
            );
            (to_json(&rep) + "\n", s)
        }
        Verb::Srpac => {
            let rep = commands::cmd_srpac(&config).map_err(fail)?;
            let s = format!(
                "srpac W={} noise_power={} converged={}",
                commands::sig9(rep.achieved_log_score),
                commands::sig9(rep.noise_power),
                rep.converged
            );
            (to_json(&rep) + "\n", s)
        }
        Verb::Sweep => {
            let table = commands::cmd_sweep(&config).map_err(fail)?;
            let rows = table.lines().count().saturating_sub(1);
            (table, format!("sweep rows={rows}"))
        }
        Verb::Compose => {
            let rep = commands::cmd_compose(&config).map_err(fail)?;
            let s = format!(
                "compose residual_floor={} mi_bound={}",
                commands::sig9(rep.residual_floor),
                commands::sig9(rep.mi_bound)
            );
            (to_json(&rep) + "\n", s)
        }
    };
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.as_ref().map(PathBuf::from));
    match out {
        Some(path) => {
            std::fs::write(&path, &content)
                .map_err(|e| (2, format!("cannot write {}: {e}", path.display())))?;
            Ok((summary, format!("wrote {}", path.display())))
        }
        None => Ok((content, String::new())),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok((primary, secondary)) => {
            if !cli.quiet {
                print!("{primary}");
                if !primary.ends_with('\n') {
                    println!();
                }
                if !secondary.is_empty() {
                    println!("{secondary}");
                }
            }
            ExitCode::SUCCESS
        }
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
