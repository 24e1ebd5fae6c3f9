//! `itocorr`: batch runner for correction constants, coupled convergence
//! experiments, second-chaos diagnostics and quadratic-variation checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use itocorr::Error;

#[derive(Debug, Parser)]
#[command(name = "itocorr", version, about = "Spatial Itô-correction experiments for discretized stochastic PDEs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Run configuration file (key = value with [scheme], [model], [time], [experiment], [output]).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the configuration file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory; overrides the configuration file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Absolute tolerance for Λ by quadrature.
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub tol: f64,
    /// Validate the inputs and exit without computing.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BuiltinArg {
    Identity,
    FiniteDifference,
    Galerkin,
}

#[derive(Debug, Args)]
pub struct SchemeArgs {
    /// Scheme description file.
    #[arg(long, conflicts_with = "builtin")]
    pub scheme: Option<PathBuf>,
    /// Builtin scheme family with μ = (δ_a − δ_{−b})/(a+b).
    #[arg(long, value_enum)]
    pub builtin: Option<BuiltinArg>,
    /// Right reach of the builtin measure.
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Left reach of the builtin measure.
    #[arg(long, default_value_t = 0.0)]
    pub b: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Correction constant Λ of a scheme.
    Lambda {
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Viscosity ν.
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        /// Also evaluate the closed form of a builtin scheme and report the difference.
        #[arg(long)]
        closed_form: bool,
    },
    /// Coupled runs of the discretized and limit equations over an ε sweep.
    Converge {
        /// Comma-separated ε values; overrides the configuration file.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        /// Replicates per ε; overrides the configuration file.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Second-chaos diagnostics: per-atom E Ξ and the negative-Sobolev ε sweep.
    Chaos {
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Comma-separated ε values of the sweep.
        #[arg(long, value_delimiter = ',', default_value = "0.04,0.02,0.01,0.005")]
        eps: Vec<f64>,
        /// Monte-Carlo samples per ε.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Viscosity ν.
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        /// Lower band exponent: modes with |k| > ε^{-γ}.
        #[arg(long, default_value_t = 1.0 / 3.0)]
        gamma: f64,
        /// Upper band exponent: modes with |k| < ε^{-χ}.
        #[arg(long, default_value_t = 1.5)]
        chi: f64,
        /// Negative Sobolev exponent of the Ξ norm.
        #[arg(long, default_value_t = 0.75)]
        alpha: f64,
        /// Number of field components.
        #[arg(long, default_value_t = 1)]
        ncomp: usize,
    },
    /// Quadratic variation of the stationary convolution: Monte Carlo vs exact sums.
    Qv {
        /// Viscosity ν.
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        /// Spectral truncation K.
        #[arg(long, default_value_t = 512)]
        kmax: usize,
        /// Sampling grid size M (at least 2K+1).
        #[arg(long, default_value_t = 2048)]
        m: usize,
        /// Monte-Carlo samples.
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
}

/// Failure of a subcommand with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Quadrature { .. } => 4,
            Error::Io(_) => 1,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 1, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
