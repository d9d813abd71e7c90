//! `ionlink` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ionlink::config::RunConfig;
use ionlink::Error;

mod commands;
mod report;

use report::Format;

#[derive(Parser)]
#[command(name = "ionlink", version, about = "Photon collection from a trapped ion through an integrated diffractive mirror")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Load every value from the published device.
    #[arg(long, global = true)]
    preset: Option<Preset>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Protocol trial count.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Console format; JSON reports are always written to the output directory.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Solid angle, collection fractions and polarizer leakage.
    Collect {
        /// Circular iris limiting the collection NA.
        #[arg(long)]
        iris_na: Option<f64>,
        /// Use an isotropic emitter instead of the dipole patterns.
        #[arg(long)]
        isotropic: bool,
    },
    /// Mirror relief, hybrid layout and design efficiency.
    Grating,
    /// Focal spot, FWHM and beam quality.
    Psf {
        /// Run a validation case instead of the mirror.
        #[arg(long, value_enum)]
        check: Option<commands::PsfCheck>,
        /// Image through the quantized relief instead of an ideal collimator.
        #[arg(long)]
        quantized: bool,
    },
    /// Fiber mode overlap, magnification scan and predicted coupling.
    Couple {
        /// Take the spot FWHM from a `psf.json` report.
        #[arg(long)]
        psf_report: Option<PathBuf>,
    },
    /// Monte Carlo of the pumping and detection sequence.
    Protocol,
    /// Second-order correlation of two detector streams.
    G2 {
        /// Event file (`.bin` or `.csv`) or `detector,time_ns` CSV; simulated when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Simulate with a lossless chain and no dark-state decays.
        #[arg(long, conflicts_with = "input")]
        ideal: bool,
    },
    /// Efficiency back-out, ion-to-fiber total and rate gain.
    Budget,
}

fn resolve(g: &Global) -> ionlink::Result<RunConfig> {
    let mut cfg = match (&g.config, g.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(Preset::Paper)) | (None, None) => RunConfig::published(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.output_dir = out.clone();
    }
    if let Some(trials) = g.trials {
        cfg.protocol.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Precondition(_) | Error::OutOfRange(_) => 2,
        Error::NonConvergence(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> ionlink::Result<()> {
    let cfg = resolve(&cli.global)?;
    let format = cli.global.format;
    match cli.command {
        Command::Collect { iris_na, isotropic } => commands::collect(cfg, iris_na, isotropic, format),
        Command::Grating => commands::grating(cfg, format),
        Command::Psf { check, quantized } => commands::psf(cfg, check, quantized, format),
        Command::Couple { psf_report } => commands::couple(cfg, psf_report.as_deref(), format),
        Command::Protocol => commands::protocol(cfg, format),
        Command::G2 { input, ideal } => commands::g2(cfg, input.as_deref(), ideal, format),
        Command::Budget => commands::budget(cfg, format),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
