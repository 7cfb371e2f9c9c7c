mod commands;
mod config;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use optosqueeze::gradient::GradientMode;

/// Optimal pulsed driving for mechanical squeezing in cavity optomechanics.
#[derive(Parser, Debug)]
#[command(name = "optosqueeze", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML file with parameter and optimizer settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (defaults to runs/<command>/...).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for the initial pulse and noise draws.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn a pulse by gradient descent.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// full-chain (default), paper-pointwise or finite-difference.
        #[arg(long, value_parser = parse_mode)]
        grad_mode: Option<GradientMode>,
        /// Stop once the squeezing reaches this many dB.
        #[arg(long)]
        target_db: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Forward run of a stored pulse.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pulse: PathBuf,
        /// Emit every n-th integration step (default: once per bin).
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Compare analytic gradients with finite differences.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long, default_value_t = 1.0)]
        t_final: f64,
        /// Check this pulse instead of a random one.
        #[arg(long)]
        pulse: Option<PathBuf>,
        /// Also check a previously dumped gradient CSV.
        #[arg(long)]
        gradient: Option<PathBuf>,
        /// Relative step of the five-point finite-difference reference.
        #[arg(long, default_value_t = 5e-3)]
        h_rel: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Parameter sweeps.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
        #[command(flatten)]
        common: Common,
        /// Pulse to perturb (required for `eta`).
        #[arg(long)]
        pulse: Option<PathBuf>,
    },
    /// Switch the drive off after the pulse and follow the decay.
    Decay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pulse: PathBuf,
        /// Time to follow the free evolution to.
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Re-simulate a pulse with Gaussian noise on its controls.
    Noise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pulse: PathBuf,
        #[arg(long)]
        sigma_omega: Option<f64>,
        #[arg(long)]
        sigma_phi: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Wigner function of the mechanics at a time within the pulse.
    Wigner {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pulse: PathBuf,
        /// Time within [0, T]; defaults to T.
        #[arg(long)]
        at_time: Option<f64>,
        /// Grid points per axis.
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
    /// Compare the moment equations with a truncated Fock-space master equation.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        /// Drive to use instead of the built-in weak test pulse.
        #[arg(long)]
        pulse: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Angle,
    Kappa,
    Eta,
}

fn parse_mode(s: &str) -> Result<GradientMode, String> {
    s.parse::<GradientMode>().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
