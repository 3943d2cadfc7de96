//! Command-line runner: one TOML config per experiment, JSON reports and
//! CSV data under `<out>/<experiment>/`.
//!
//! Exit codes: 0 all checks pass, 1 a check failed or a numerical step
//! broke down, 2 bad input (config, files, preconditions).

pub mod commands;
pub mod config;
pub mod csvio;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use commands::Context;
use config::RunConfig;
use report::Report;

#[derive(Debug, Parser)]
#[command(name = "cauchyform", version, about = "Wave and Maxwell propagators on spacetimes with timelike boundary")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// experiment config (TOML)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// base output directory (default: config output_dir, else ./out)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// override the config seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// override the number of uniform refinements
    #[arg(long, global = true)]
    pub refine: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the mesh and report its combinatorics
    Mesh,
    /// Eigenvalues of the constrained operator
    Spectrum,
    /// Run the full invariant suite
    Verify,
    /// Apply the retarded, advanced and causal propagators to a source
    Propagate {
        #[arg(long)]
        source: PathBuf,
    },
    /// Lorenz gauge fixing of a potential
    Gaugefix {
        #[arg(long)]
        potential: PathBuf,
    },
    /// Betti numbers and harmonic fields
    Cohomology,
    /// Presymplectic form identities
    Symplectic,
    /// Radical of the observable pairing
    Radical,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Mesh => "mesh",
            Command::Spectrum => "spectrum",
            Command::Verify => "verify",
            Command::Propagate { .. } => "propagate",
            Command::Gaugefix { .. } => "gaugefix",
            Command::Cohomology => "cohomology",
            Command::Symplectic => "symplectic",
            Command::Radical => "radical",
        }
    }
}

/// Loads the config, applies the flag overrides and runs the command. The
/// report is also written to the output directory.
pub fn execute(cli: &Cli) -> Result<(Report, PathBuf)> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Precondition("--config <path> is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(r) = cli.refine {
        cfg.refine = r;
    }
    let base = cli.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Context::new(cfg, &base)?;
    let report = match &cli.command {
        Command::Mesh => commands::cmd_mesh(&ctx)?,
        Command::Spectrum => commands::cmd_spectrum(&ctx)?,
        Command::Verify => commands::cmd_verify(&ctx)?,
        Command::Propagate { source } => commands::cmd_propagate(&ctx, source)?,
        Command::Gaugefix { potential } => commands::cmd_gaugefix(&ctx, potential)?,
        Command::Cohomology => commands::cmd_cohomology(&ctx)?,
        Command::Symplectic => commands::cmd_symplectic(&ctx)?,
        Command::Radical => commands::cmd_radical(&ctx)?,
    };
    let file = ctx.out.write_new(cli.command.name(), "json", report.to_json().as_bytes())?;
    Ok((report, file))
}

pub fn exit_code(result: &Result<(Report, PathBuf)>) -> i32 {
    match result {
        Ok((r, _)) if r.passed() => 0,
        Ok(_) => 1,
        Err(e) if e.is_precondition() => 2,
        Err(_) => 1,
    }
}

/// Entry point shared by the binary and the tests.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = execute(&cli);
    match &result {
        Ok((r, file)) => {
            for c in &r.checks {
                println!("{:<28} {:?}", c.name, c.status);
            }
            println!("{}: {:?} ({})", cli.command.name(), r.status, file.display());
        }
        Err(e) => eprintln!("error: {e}"),
    }
    exit_code(&result)
}
