//! `abe`: two-stage adaptive bioequivalence designs from the command line.

mod commands;
mod config;
mod error;
mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::Report;
use crate::config::{read_table, typed, CalibrateInput, CALIBRATE, INTERIM, SIMULATE, TRIAL};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "abe", version, about = "Adaptive two-stage TOST for average bioequivalence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML input file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream; overrides seeds in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for `simulate` (0: all available cores).
    #[arg(long, global = true, env = "ABE_WORKERS", default_value_t = 0)]
    workers: usize,
    /// Directory to write the result and its manifest into. Without it the
    /// result goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Pocock-type efficacy bound for a futility bound and weights.
    Calibrate {
        #[arg(long, value_parser = real)]
        alpha: Option<f64>,
        #[arg(long, value_parser = real)]
        alpha0: Option<f64>,
        /// First-stage weight of the decision statistic; accepts `sqrt:x`.
        #[arg(long, value_parser = real)]
        w: Option<f64>,
        /// Second weight; accepts `sqrt:x`.
        #[arg(long, value_parser = real)]
        wstar: Option<f64>,
        /// Δ/σ₁ₙ used for the interval-ordering diagnostics.
        #[arg(long, value_parser = real)]
        delta_over_sigma: Option<f64>,
    },
    /// Interim or final decision from stage summaries.
    Decide,
    /// Decision-aligned confidence bounds from stage summaries.
    Ci,
    /// Stage-2 sample size from interim summaries.
    Ssr,
    /// Operating characteristics of simulated studies.
    Simulate,
}

fn real(s: &str) -> Result<f64, String> {
    config::parse_real(s)
}

fn required_config(common: &Common) -> Result<&PathBuf, CliError> {
    common.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))
}

fn run(cli: &Cli) -> Result<(&'static str, Report), CliError> {
    let c = &cli.common;
    Ok(match &cli.command {
        Command::Calibrate { alpha, alpha0, w, wstar, delta_over_sigma } => {
            let from_file: CalibrateInput = match &c.config {
                Some(p) => typed(read_table(p, CALIBRATE)?)?,
                None => CalibrateInput::default(),
            };
            let input = CalibrateInput {
                alpha: alpha.or(from_file.alpha),
                alpha0: alpha0.or(from_file.alpha0),
                w: w.or(from_file.w),
                w_star: wstar.or(from_file.w_star),
                delta_over_sigma: delta_over_sigma.or(from_file.delta_over_sigma),
            };
            ("calibrate", commands::calibrate(input)?)
        }
        Command::Decide => ("decide", commands::decide(typed(read_table(required_config(c)?, TRIAL)?)?)?),
        Command::Ci => ("ci", commands::ci(typed(read_table(required_config(c)?, TRIAL)?)?)?),
        Command::Ssr => ("ssr", commands::ssr(typed(read_table(required_config(c)?, INTERIM)?)?, c.seed)?),
        Command::Simulate => {
            let study = typed(read_table(required_config(c)?, SIMULATE)?)?;
            ("simulate", commands::simulate(study, c.seed, c.workers)?)
        }
    })
}

fn emit(common: &Common, name: &str, report: &Report) -> Result<(), CliError> {
    let body = match common.format {
        Format::Csv => format!("{}{}", report.manifest.comment_block(), report.csv),
        Format::Table => report.table.clone(),
    };
    match &common.out {
        None => {
            std::io::stdout().write_all(body.as_bytes())?;
        }
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let (ext, text) = match common.format {
                Format::Csv => ("csv", body),
                Format::Table => ("txt", format!("{}{}", report.manifest.comment_block(), body)),
            };
            std::fs::write(dir.join(format!("{name}.{ext}")), text)?;
            std::fs::write(dir.join("manifest.toml"), report.manifest.stamped().to_toml())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli).and_then(|(name, report)| emit(&cli.common, name, &report));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("abe: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
