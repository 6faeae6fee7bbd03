//! `crt-hte`: power, sample size, simulation and case-study curves for
//! cluster randomized trials targeting treatment-effect heterogeneity.

mod casestudy;
mod commands;
mod config;
mod manifest;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Parser, Subcommand};
use crt_hte_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::manifest::{params_sha256, write_output, RunManifest};

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_SIMULATION: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "crt-hte", version, about, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Top,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Manifest file; `<out>.manifest.json` when `--out` is given, stderr otherwise.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Worker threads for simulation.
    #[arg(long, global = true, env = "CRT_HTE_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Top {
    #[command(flatten)]
    Run(Command),
    /// Re-run the command recorded in a manifest.
    Replay { manifest_path: PathBuf },
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Randomization inflation factor of a design.
    Psi(commands::PsiArgs),
    /// Predicted power of a fixed-prevalence design.
    Power(commands::PowerArgs),
    /// Average cluster size reaching a target power.
    Samplesize(commands::SampleSizeArgs),
    /// Planned cluster size and power under drop-out.
    Dropout(commands::DropoutArgs),
    /// Monte Carlo operating characteristics.
    Simulate(simulate::SimulateArgs),
    /// Power curves and thresholds of the published trial configurations.
    Casestudy(casestudy::CaseStudyArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Psi(_) => "psi",
            Command::Power(_) => "power",
            Command::Samplesize(_) => "samplesize",
            Command::Dropout(_) => "dropout",
            Command::Simulate(_) => "simulate",
            Command::Casestudy(_) => "casestudy",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Psi(a) => Some(a.seed),
            Command::Simulate(a) => Some(a.seed),
            _ => None,
        }
    }

    fn config_path(&self) -> Option<&PathBuf> {
        match self {
            Command::Psi(a) => a.config.as_ref(),
            Command::Power(a) => a.config.as_ref(),
            Command::Samplesize(a) => a.config.as_ref(),
            Command::Dropout(a) => a.config.as_ref(),
            Command::Simulate(a) => a.config.as_ref(),
            Command::Casestudy(_) => None,
        }
    }
}

/// Context every command runs in.
pub struct Run<'a> {
    pub config: Option<&'a Config>,
    pub threads: Option<usize>,
    pub params_sha256: String,
}

impl Run<'_> {
    pub fn config(&self) -> Result<&Config> {
        self.config
            .ok_or_else(|| anyhow::anyhow!("this command needs --config <design.json>"))
    }
}

fn dispatch(cmd: &Command, run: &Run) -> Result<String> {
    match cmd {
        Command::Psi(a) => commands::psi(a, run),
        Command::Power(a) => commands::power(a, run),
        Command::Samplesize(a) => commands::samplesize(a, run),
        Command::Dropout(a) => commands::dropout(a, run),
        Command::Simulate(a) => simulate::simulate(a, run),
        Command::Casestudy(a) => casestudy::casestudy(a, run),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let start = Instant::now();
    let (cmd, config_path, config) = match cli.command {
        Top::Run(cmd) => {
            let path = cmd.config_path().cloned();
            let config = path.as_deref().map(Config::load).transpose()?;
            (cmd, path, config)
        }
        Top::Replay { manifest_path } => {
            let m = RunManifest::load(&manifest_path)?;
            (m.params, m.config_path, m.config)
        }
    };
    let run = Run {
        config: config.as_ref(),
        threads: cli.threads,
        params_sha256: params_sha256(cmd.name(), &config, &cmd),
    };
    let body = dispatch(&cmd, &run)?;
    write_output(cli.out.as_deref(), &body)?;
    let manifest_path = cli.manifest.or_else(|| {
        cli.out.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    let outputs = cli.out.into_iter().collect();
    RunManifest::new(&cmd, config_path, config, outputs, start.elapsed())
        .write(manifest_path.as_deref())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::SimulationFailed { .. }) => EXIT_SIMULATION,
        Some(
            Error::EnumerationTooLarge { .. }
            | Error::NoRootInBracket { .. }
            | Error::NonPositiveDiscriminant(_)
            | Error::SingularInformation
            | Error::DegenerateDenominator(_),
        ) => EXIT_INFEASIBLE,
        _ => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
