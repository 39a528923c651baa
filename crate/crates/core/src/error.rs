use alloc::string::String;
use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Grid bounds or cell count rejected.
    InvalidGrid(String),
    /// Density values negative, non-finite, or of the wrong length.
    InvalidDensity(String),
    /// Operation requires a positive total mass.
    ZeroMass,
    /// Two fields that must carry the same mass do not.
    MassMismatch { left: f64, right: f64 },
    /// Two fields live on different grids.
    GridMismatch,
    /// Mass coordinate outside `[0, mass]`.
    MassCoordinateOutOfRange { s: f64, mass: f64 },
    /// Map samples decrease.
    NonMonotoneMap,
    /// Model parameters violate their invariants.
    InvalidParams(String),
    /// Equilibrium constants could not be bracketed.
    BisectionFailure(String),
    /// The inner solver stopped before reaching its tolerance.
    NotConverged { iterations: usize, residual: f64 },
    /// State violates the `ρ¹ + ρ² ≤ 1` constraint.
    Infeasible(String),
    /// A time or time window outside the trajectory.
    OutOfRange(String),
    /// A step failed inside a trajectory run.
    StepFailed { step: usize, source: alloc::boxed::Box<Error> },
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidGrid(msg) => write!(f, "invalid grid: {msg}"),
            Error::InvalidDensity(msg) => write!(f, "invalid density: {msg}"),
            Error::ZeroMass => write!(f, "transport operations require positive mass"),
            Error::MassMismatch { left, right } => {
                write!(f, "mass mismatch: {left} vs {right}")
            }
            Error::GridMismatch => write!(f, "fields live on different grids"),
            Error::MassCoordinateOutOfRange { s, mass } => {
                write!(f, "mass coordinate {s} outside [0, {mass}]")
            }
            Error::NonMonotoneMap => write!(f, "transport map samples are not monotone"),
            Error::InvalidParams(msg) => write!(f, "invalid model parameters: {msg}"),
            Error::BisectionFailure(msg) => write!(f, "equilibrium bisection failed: {msg}"),
            Error::NotConverged {
                iterations,
                residual,
            } => write!(
                f,
                "inner solver did not converge after {iterations} iterations (residual {residual:e})"
            ),
            Error::Infeasible(msg) => write!(f, "infeasible state: {msg}"),
            Error::OutOfRange(msg) => write!(f, "out of range: {msg}"),
            Error::StepFailed { step, source } => write!(f, "step {step} failed: {source}"),
        }
    }
}
