use thiserror::Error;

/// Errors raised by the model, solvers and ensemble runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),

    #[error("initial mass density is identically zero on its support")]
    ZeroDensity,

    #[error("non-finite state at t = {t}: {detail}")]
    NonFinite { t: f64, detail: String },

    #[error("CFL ratio {ratio:.6} exceeds 1 (dt = {dt}, dx = {dx})")]
    Cfl { ratio: f64, dt: f64, dx: f64 },

    #[error("density solver blew up at step {step} (t = {t}): {detail}")]
    Blowup { step: usize, t: f64, detail: String },

    #[error("degenerate reference trajectory: {0}")]
    DegenerateReference(String),

    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("{0} is not supported by the individual-based simulator")]
    Unsupported(&'static str),

    #[error("replicate {index} (seed {seed}) failed: {source}")]
    Replicate {
        index: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(what: &'static str, value: f64, domain: &'static str) -> Error {
    Error::Domain {
        what,
        value,
        domain,
    }
}
