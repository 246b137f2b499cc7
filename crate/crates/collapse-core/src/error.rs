//! Error types shared across the crate.

use std::fmt;

/// Errors produced by solvers, evaluators and the simulator.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// An input is outside the domain of the operation.
    Domain(String),
    /// A fixed-point iteration did not reach tolerance.
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    /// The configuration sits on the interpolation threshold; the solved
    /// quantities diverge there.
    Threshold { psi: f64, detail: String },
    /// A matrix factorization failed (conditioning).
    Numeric { what: &'static str, condition: f64 },
    /// Scenario configuration problems, one message per offending field.
    Validation(Vec<String>),
    /// I/O while reading configs or writing results.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Convergence {
                what,
                iterations,
                residual,
            } => write!(
                f,
                "{what} did not converge after {iterations} iterations (last residual {residual:.3e})"
            ),
            Error::Threshold { psi, detail } => {
                write!(f, "interpolation threshold at psi = {psi}: {detail}")
            }
            Error::Numeric { what, condition } => {
                write!(f, "{what} failed (condition estimate {condition:.3e})")
            }
            Error::Validation(fields) => {
                write!(f, "invalid configuration:")?;
                for msg in fields {
                    write!(f, "\n  - {msg}")?;
                }
                Ok(())
            }
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
