use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field index {index} out of range for a system with {len} fields")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid bracket set: {0}")]
    InvalidBracketSet(String),

    #[error("field {0} has no analytic Jacobian and finite differences are disabled")]
    MissingJacobian(usize),

    #[error("bracket matrix is singular (condition number {condition:e})")]
    SingularBracketMatrix { condition: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("function is not positive definite (vanishes at a nonzero point)")]
    NotPositiveDefinite,

    #[error("sampling grid is empty")]
    EmptyGrid,

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("frequencies are resonant: |k| values must be pairwise distinct and nonzero")]
    Resonant,

    #[error("non-finite value encountered at t = {time}")]
    NonFinite { time: f64 },

    #[error("state left the domain at t = {time}: |x| = {norm:e} > {limit:e}")]
    DomainEscape { time: f64, norm: f64, limit: f64 },

    #[error("synthesis failed on interval {interval}: {source}")]
    Synthesis {
        interval: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("steering infeasible for k12 = {k12}: discriminant {discriminant:e} < 0")]
    InfeasibleSteer { k12: i32, discriminant: f64 },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
