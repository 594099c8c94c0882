//! `nrdf`: rate distortion curves, solver cross-checks and Gaussian realization runs.
//!
//! Exit codes: 0 all checks passed, 1 invalid input, 2 numerical non-convergence,
//! 3 a computed check exceeded its tolerance.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_format, parse_grid, require, ConfigError, FileConfig, Format, ModelSource};

#[derive(Parser)]
#[command(name = "nrdf", version, about = "Nonanticipative rate distortion functions for sources with memory")]
struct Cli {
    /// JSON file with default values for any flag (keys p, D_grid, model, Q, tol, seed, out,
    /// format, horizon, burn_in, memory).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// Distortion grid: lo:step:hi, a comma list, or one value.
    #[arg(long = "D-grid")]
    d_grid: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form NRDF, classical RDF, SLB and rate-loss bound of a binary symmetric Markov source.
    BsmsCurve {
        #[arg(long)]
        p: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Closed form against the iterative finite-alphabet solver.
    BsmsVerify {
        #[arg(long)]
        p: Option<f64>,
        /// Output symbols the solver's reproduction kernel conditions on.
        #[arg(long)]
        memory: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Gaussian NRDF fixed point, matching identity and Monte Carlo realization.
    Gauss {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Channel noise variances, comma separated (default: q_i = delta_i).
        #[arg(long = "Q", value_delimiter = ',')]
        q: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// NRDF minus the classical RDF of a stable Gaussian model.
    RateLoss {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long = "Q", value_delimiter = ',')]
        q: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
}

pub enum Failure {
    Input(String),
    Numerical(String),
    Tolerance(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Input(e.0)
    }
}

impl From<nrdf_core::Error> for Failure {
    fn from(e: nrdf_core::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(format!("i/o: {e}"))
    }
}

/// Flag and config values merged, flags first.
pub struct Resolved {
    pub grid: Vec<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub tol: Option<f64>,
}

fn resolve(common: Common, file: &mut FileConfig) -> Result<Resolved, ConfigError> {
    let grid = parse_grid(&require(common.d_grid.or(file.d_grid.take()), "D_grid")?)?;
    let format = common.format.or(file.format.take()).map(|f| parse_format(&f)).transpose()?;
    let tol = common.tol.or(file.tol);
    if let Some(t) = tol {
        if !(t > 0.0) || !t.is_finite() {
            return Err(config::field_err("tol", "must be positive"));
        }
    }
    Ok(Resolved {
        grid,
        out: common.out.or(file.out.take()),
        format,
        tol,
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::BsmsCurve { p, common } => {
            let p = require(p.or(file.p), "p")?;
            let r = resolve(common, &mut file)?;
            commands::bsms_curve(p, &r)
        }
        Command::BsmsVerify { p, memory, common } => {
            let p = require(p.or(file.p), "p")?;
            let memory = memory.or(file.memory).unwrap_or(1);
            let r = resolve(common, &mut file)?;
            commands::bsms_verify(p, memory, &r)
        }
        Command::Gauss {
            model,
            q,
            seed,
            horizon,
            burn_in,
            common,
        } => {
            let model = require(model.map(ModelSource::Path).or(file.model.take()), "model")?;
            let model = config::load_model(&model)?;
            let opts = commands::GaussRun {
                q: q.or(file.q.take()),
                seed: seed.or(file.seed).unwrap_or(0),
                horizon: horizon.or(file.horizon).unwrap_or(100_000),
                burn_in: burn_in.or(file.burn_in).unwrap_or(nrdf_core::realization::DEFAULT_BURN_IN),
            };
            let r = resolve(common, &mut file)?;
            commands::gauss(&model, &opts, &r)
        }
        Command::RateLoss { model, q, common } => {
            let model = require(model.map(ModelSource::Path).or(file.model.take()), "model")?;
            let model = config::load_model(&model)?;
            let q = q.or(file.q.take());
            let r = resolve(common, &mut file)?;
            commands::rate_loss(&model, q, &r)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Tolerance(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
    }
}
