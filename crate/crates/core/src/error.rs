use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = RdError> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
}

#[derive(Debug, Error)]
pub enum RdError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited input: {0}")]
    Csv(#[from] csv::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("non-numeric value `{value}` in column `{column}` at data row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("no rows survive validation")]
    NoRows,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no observations with positive weight on the {side} side at bandwidth {bandwidth}")]
    EmptyWindow { side: &'static str, bandwidth: f64 },
    #[error("insufficient data for {what}: need {needed}, have {available}")]
    InsufficientData {
        what: String,
        needed: usize,
        available: usize,
    },
    #[error("rank-deficient design: column {column} (`{name}`) is linearly dependent on earlier columns")]
    RankDeficient { column: usize, name: String },
    #[error("covariate `{0}` is collinear with the other regressors inside the window")]
    CollinearCovariate(String),
    #[error("singular matrix in {0}")]
    SingularMatrix(&'static str),
    #[error("density estimate window around the cutoff contains no observations")]
    ZeroDensityWindow,
    #[error("robust standard error is zero; inference is degenerate (tau = {tau}, tau_bc = {tau_bc})")]
    DegenerateVariance { tau: f64, tau_bc: f64 },
    #[error("group level `{level}`: {source}")]
    GroupLevel {
        level: String,
        #[source]
        source: Box<RdError>,
    },
}

impl RdError {
    pub fn class(&self) -> ErrorClass {
        match self {
            RdError::RankDeficient { .. }
            | RdError::CollinearCovariate(_)
            | RdError::SingularMatrix(_)
            | RdError::ZeroDensityWindow
            | RdError::DegenerateVariance { .. }
            | RdError::EmptyWindow { .. }
            | RdError::InsufficientData { .. } => ErrorClass::Numerical,
            RdError::GroupLevel { source, .. } => source.class(),
            _ => ErrorClass::Validation,
        }
    }

    /// Short stable identifier, suitable for machine parsing.
    pub fn code(&self) -> &'static str {
        match self {
            RdError::Io { .. } => "io",
            RdError::Csv(_) => "csv",
            RdError::Config(_) => "config",
            RdError::MissingColumn(_) => "missing-column",
            RdError::UnknownColumn(_) => "unknown-column",
            RdError::NonNumeric { .. } => "non-numeric",
            RdError::NoRows => "no-rows",
            RdError::InvalidArgument(_) => "invalid-argument",
            RdError::EmptyWindow { .. } => "empty-window",
            RdError::InsufficientData { .. } => "insufficient-data",
            RdError::RankDeficient { .. } => "rank-deficient",
            RdError::CollinearCovariate(_) => "collinear-covariate",
            RdError::SingularMatrix(_) => "singular-matrix",
            RdError::ZeroDensityWindow => "zero-density-window",
            RdError::DegenerateVariance { .. } => "degenerate-variance",
            RdError::GroupLevel { source, .. } => source.code(),
        }
    }
}
