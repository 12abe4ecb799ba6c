//! Error type shared across the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// No perfect difference set exists (or can be found) for this order.
    #[error("no perfect difference set for q={0} (q must be prime, q <= 13)")]
    NotFound(u64),
    /// The provided set is not a perfect difference set for the modulus.
    #[error("not a perfect difference set modulo {modulus}: {reason}")]
    InvalidDiffSet { modulus: u64, reason: String },
    #[error("{0} and {1} are not coprime")]
    NotCoprime(u64, u64),
    #[error("ruler length {length} exceeds the largest antenna index {max}")]
    RulerTooLong { length: usize, max: usize },
    #[error("entry {index} of the training vector is not 0 or 1")]
    NonBinary { index: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("support budget {requested} exceeds the dictionary size {dict}")]
    SupportExhausted { requested: usize, dict: usize },
    #[error("measurement matrix for the selected support is rank deficient")]
    RankDeficient,
    #[error("cannot take {requested} signal directions from a {dim}-dimensional covariance")]
    RankError { requested: usize, dim: usize },
    #[error("measurement matrix is ill-conditioned (condition number {cond:.3e})")]
    IllConditioned { cond: f64 },
    #[error("ruler does not cover lag {lag}")]
    IncompleteRuler { lag: usize },
    #[error("model covariance became numerically singular")]
    SingularCovariance,
    #[error("matrix to invert is singular")]
    Singular,
    #[error("all delay-domain observations are zero")]
    DegenerateObservation,
    #[error("support is empty")]
    EmptySupport,
    #[error("reference has zero energy")]
    ZeroReference,
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}
