use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid symmetry order q = {q}: supported range is 4..={max}")]
    InvalidQ { q: u32, max: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("atlas capacity exceeded: more than {limit} sites")]
    Capacity { limit: usize },

    #[error("coordinate overflow while adding lattice keys")]
    KeyOverflow,

    #[error("site is not in the atlas: {0}")]
    NotInAtlas(String),

    #[error("fields live on different atlases")]
    AtlasMismatch,

    #[error("product truncated: lost mass {loss:e} exceeds threshold {threshold:e}")]
    Truncation { loss: f64, threshold: f64 },

    #[error("labels were computed for a different atlas")]
    Unclassified,

    #[error("input has mass {mass:e} outside the disc region")]
    Support { mass: f64 },

    #[error("solvability condition fails at site {site}: coefficient {value:e}")]
    Solvability { site: usize, value: f64 },

    #[error("{what} = {value} is out of range")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("independent computations disagree: {0}")]
    Inconsistent(String),

    #[error("Jacobi iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("singular block: the far-field block is not invertible on this truncation")]
    SingularBlock,

    #[error("singular Jacobian at Newton iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("matrix factorization failed")]
    Factorization,

    #[error("fixed-point iteration diverged at step {step}")]
    Divergence { step: usize },

    #[error("continuation failed at lambda = {lambda}: {source}")]
    Continuation { lambda: f64, source: Box<Error> },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
