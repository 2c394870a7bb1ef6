use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A value lies outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or missing configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Sample has zero spread, so no kernel bandwidth can be chosen.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// Particle system has collapsed in a way that stops the sampler.
    #[error("degenerate particle system: {0}")]
    DegenerateSystem(String),

    /// Too many prior-predictive simulations failed during initialization.
    #[error("initialization aborted: {failed} of {total} simulations were degenerate")]
    InitializationFailed { failed: usize, total: usize },

    /// A slot could not reach the tolerance within its attempt budget.
    #[error(
        "iteration {iteration}: slot {slot} exhausted {attempts} attempts at tolerance {tolerance:e} \
         (acceptance rate so far {acceptance_rate:.3e})"
    )]
    AttemptsExhausted {
        iteration: usize,
        slot: usize,
        attempts: usize,
        tolerance: f64,
        acceptance_rate: f64,
    },

    #[error("iteration {iteration}: every importance weight is zero")]
    ZeroWeights { iteration: usize },
}
