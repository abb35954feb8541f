//! Front end for `confdim-core`: versioned JSON inputs, JSON or CSV reports,
//! and a fixed exit-code contract.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O or unexpected computation error |
//! | 2 | usage or schema error, empty catalog |
//! | 3 | a Levy cycle obstructs the exponent |
//! | 4 | solver did not converge |
//! | 5 | a verification case failed |

pub mod args;
mod commands;
pub mod emit;
mod schema;

use std::fs;
use std::io::Write;

use thiserror::Error;

use confdim_core::covers::CoverError;
use confdim_core::modulus::ModulusError;
use confdim_core::multicurve::MulticurveError;

use args::{Cli, Command, Output, Suite};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Levy,
    Failed,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Levy => 3,
            Status::Failed => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("{0}")]
    Usage(String),
    #[error("no convergence: {0}")]
    NonConvergence(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Schema(_) | CliError::EmptyCatalog | CliError::Usage(_) => 2,
            CliError::NonConvergence(_) => 4,
            CliError::Io(_) | CliError::Compute(_) => 1,
        }
    }
}

impl From<MulticurveError> for CliError {
    fn from(e: MulticurveError) -> Self {
        match e {
            MulticurveError::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
            MulticurveError::EmptyCatalog => CliError::EmptyCatalog,
            other => CliError::Compute(other.to_string()),
        }
    }
}

impl From<ModulusError> for CliError {
    fn from(e: ModulusError) -> Self {
        match e {
            ModulusError::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
            other => CliError::Compute(other.to_string()),
        }
    }
}

impl From<CoverError> for CliError {
    fn from(e: CoverError) -> Self {
        match e {
            CoverError::Modulus(m) => m.into(),
            CoverError::Multicurve(m) => m.into(),
            CoverError::CapExceeded { .. }
            | CoverError::Degenerate { .. }
            | CoverError::ZeroDegree => CliError::Usage(e.to_string()),
            other => CliError::Compute(other.to_string()),
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(commands::Outcome, &Output), CliError> {
    Ok(match &cli.command {
        Command::QGamma(a) => (commands::q_gamma(a)?, &a.output),
        Command::QMap(a) => (commands::q_map(a)?, &a.output),
        Command::Modulus(a) => (commands::modulus(a)?, &a.output),
        Command::Verify(v) => match &v.suite {
            Suite::ScalingCheck(a) => (commands::scaling_check(a)?, &a.output),
            Suite::GrowthCheck(a) => (commands::growth_check(a)?, &a.output),
            Suite::PackCheck(a) => (commands::pack_check(a)?, &a.output),
            Suite::Props(a) => (commands::props(a)?, &a.output),
        },
    })
}

/// Runs a parsed command, writes its report, and returns the exit code.
pub fn run(cli: &Cli) -> u8 {
    let result = dispatch(cli).and_then(|((report, status), output)| {
        let bytes = report
            .render(output.format)
            .map_err(|e| CliError::Io(e.to_string()))?;
        match &output.out {
            Some(path) => fs::write(path, &bytes)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
            None => std::io::stdout()
                .write_all(&bytes)
                .map_err(|e| CliError::Io(e.to_string()))?,
        }
        Ok(status)
    });
    match result {
        Ok(status) => status.code(),
        Err(e) => {
            eprintln!("confdim: {e}");
            e.code()
        }
    }
}
