use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("RIS phase entry {index} has modulus {modulus}, expected 1")]
    NonUnitPhase { index: usize, modulus: f64 },

    #[error("selected dictionary columns are ill-conditioned (condition number {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("stacked user channels are rank deficient (condition number {cond:.3e})")]
    DegenerateChannel { cond: f64 },

    #[error("zero-norm vector has no direction")]
    ZeroNorm,

    #[error("feedback protocol error: {0}")]
    Protocol(String),

    #[error("malformed payload: {0}")]
    MalformedPayload(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("trial failed after {attempts} resamples: {source}")]
    TrialExhausted {
        attempts: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
