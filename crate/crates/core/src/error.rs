use thiserror::Error;

/// Errors raised by the simulation and diagnostics layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("dealiasing error: grid has {nodes} nodes but {needed} are required for {modes} modes")]
    Dealiasing {
        nodes: usize,
        needed: usize,
        modes: usize,
    },

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("numerical blow-up at t = {time}")]
    BlowUp { time: f64 },

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("amplitude {amplitude} outside expansion radius {radius}")]
    ExpansionDomain { amplitude: f64, radius: f64 },

    #[error("truncation error: {0}")]
    Truncation(String),

    #[error("fit refused: {0}")]
    FitRefused(String),

    #[error("configuration error: {0}")]
    Configuration(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
