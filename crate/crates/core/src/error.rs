//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor legs, bond extents or qubit counts do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A dense linear-algebra routine failed (SVD/QR non-convergence, …).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An input violated a validated invariant (e.g. a non-unitary gate).
    #[error("validation failed: {0}")]
    Validation(String),

    /// Malformed model/run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A resource ladder was exhausted (bond-dimension cap, time grid, …).
    /// Carries the last convergence cost observed before giving up.
    #[error("capacity exceeded: {context} (last cost {last_cost:e})")]
    Capacity { context: String, last_cost: f64 },

    /// An environment cache was used out of sync with its circuit.
    #[error("internal state: {0}")]
    InternalState(String),

    /// An operation was called in a state where it is not meaningful.
    #[error("usage: {0}")]
    Usage(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    /// Corrupt or unreadable serialized artifact.
    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
