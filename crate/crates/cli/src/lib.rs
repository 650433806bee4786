//! Experiment runner for the in-situ backpropagation simulator.
//!
//! Every subcommand reads one TOML config (flags override it), writes its
//! results to the output directory and tags each file with the config hash
//! and seed.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use config::{ExperimentConfig, Overrides};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "insitu",
    version,
    about = "Simulated in-situ training of photonic meshes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Gradient readout on the hardware.
    #[arg(long, global = true, value_enum)]
    pub method: Option<MethodArg>,

    /// Disable every hardware error.
    #[arg(long, global = true)]
    pub ideal: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train a model and log every iteration.
    Train,
    /// Compare measured gradients with central finite differences.
    Gradcheck,
    /// Train over a grid of hardware error levels.
    NoiseSweep,
    /// Fit heater calibration models to simulated sweeps.
    Calibrate,
    /// Dump the phase-swept sum-pass traces of every shifter.
    AnalogDemo,
    /// Evaluate the energy model.
    Energy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Digital,
    Analog,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            method: self.method.map(|m| match m {
                MethodArg::Digital => insitu_core::GradientMethod::Digital,
                MethodArg::Analog => insitu_core::GradientMethod::analog(),
            }),
            ideal: self.ideal,
        }
    }
}

/// Runs one parsed invocation; the returned lines are the report printed to stdout.
pub fn run(cli: &Cli) -> Result<Vec<String>, CliError> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides())?;
    let out = output::OutputDir::create(&cfg)?;
    match cli.command {
        Command::Train => commands::train(&cfg, &out),
        Command::Gradcheck => commands::gradcheck(&cfg, &out),
        Command::NoiseSweep => commands::noise_sweep(&cfg, &out),
        Command::Calibrate => commands::calibrate(&cfg, &out),
        Command::AnalogDemo => commands::analog_demo(&cfg, &out),
        Command::Energy => commands::energy(&cfg, &out),
    }
}
