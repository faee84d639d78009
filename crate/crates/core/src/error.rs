use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Non-finite or out-of-domain numerical input.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration or mismatched dimensions.
    #[error("configuration error: {0}")]
    Config(String),

    /// Gram matrix could not be factorized even with jitter escalation.
    #[error("singular design: points {first} and {second} are {distance:e} apart")]
    SingularDesign {
        first: usize,
        second: usize,
        distance: f64,
    },

    /// Posterior covariance could not be factorized for sampling.
    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    #[error("fixed-point iteration diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("fixed-point iteration did not converge within {max_iter} iterations{}", step_suffix(.step))]
    NonConvergence { max_iter: usize, step: Option<usize> },

    #[error("solver {solver} failed: {reason}")]
    Solver { solver: usize, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A contraction modulus ρ ≥ 1 was supplied where ρ < 1 is required.
    #[error("contraction violated: rho = {0} >= 1")]
    ContractionViolation(f64),

    /// A bound was requested outside the regime where it holds.
    #[error("bound hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("too many non-converged replications: {excluded} of {total}")]
    ExcessiveExclusions { excluded: usize, total: usize },

    #[error("io error: {0}")]
    Io(String),
}

fn step_suffix(step: &Option<usize>) -> String {
    match step {
        Some(s) => format!(" (cycle step {s})"),
        None => String::new(),
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
