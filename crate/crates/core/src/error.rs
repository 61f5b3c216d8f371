use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The requested closed form is not available at this phase.
    #[error("unsupported domain: {0}")]
    UnsupportedDomain(String),

    /// The Fock-space truncation is too small for the dynamics being simulated.
    #[error(
        "fock cutoff {cutoff} too small: top level population {population:.3e} exceeds {threshold:.1e}"
    )]
    CutoffTooSmall {
        cutoff: usize,
        population: f64,
        threshold: f64,
    },

    /// No detection class carries phase information at this operating point.
    #[error("no phase sensitivity: {0}")]
    NoSensitivity(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
