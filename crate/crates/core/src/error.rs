use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spin value {value} at index {index} (must be -1 or +1)")]
    InvalidSpin { index: usize, value: i64 },

    #[error("site index {site} out of range for lattice with {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("enumeration too large: {units} units exceeds the limit of {limit}")]
    EnumerationTooLarge { units: usize, limit: usize },

    #[error("training diverged: non-finite parameters after epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("energy {0} outside the open interval (-2, 0)")]
    EnergyOutOfDomain(f64),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSpin { .. } => "invalid_spin",
            Error::SiteOutOfRange { .. } => "site_out_of_range",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::EmptyInput(_) => "empty_input",
            Error::EnumerationTooLarge { .. } => "enumeration_too_large",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::EnergyOutOfDomain(_) => "energy_out_of_domain",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
