use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by the exit code the command-line front end maps them
/// to: see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sensor model: {0}")]
    InvalidModel(String),
    #[error("invalid Ramsey control: {0}")]
    InvalidControl(String),
    #[error("invalid sensing budget: {0}")]
    InvalidBudget(String),
    #[error("classical noise standard deviation must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("empty grid: {0}")]
    EmptyGrid(String),
    #[error("posterior degenerated: every likelihood evaluated to zero")]
    DegeneratePosterior,
    #[error("sensing budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error("empty refinement interval [{lo}, {hi}]")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("parse error at byte {offset}: {msg}")]
    ParseBinary { offset: usize, msg: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cell ({i}, {j}) outside {width}x{height} grid")]
    OutOfBounds {
        i: usize,
        j: usize,
        width: usize,
        height: usize,
    },
    #[error("cell ({i}, {j}) touches a nodata pixel")]
    NodataCorner { i: usize, j: usize },
    #[error("raster centre latitude {0} deg is too close to a pole for planar conversion")]
    PolarDegenerate(f64),
    #[error("main-field provider undefined at lat {lat}, lon {lon}")]
    ProviderDomain { lat: f64, lon: f64 },

    #[error("covariance is not symmetric: {0}")]
    AsymmetricCovariance(String),
    #[error("covariance is singular")]
    SingularCovariance,
    #[error("region of interest contains no valid cells")]
    EmptyRoi,
    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),
    #[error("site {0} lies outside the map")]
    SiteOutOfMap(String),
    #[error("site {0} touches nodata")]
    NodataSite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 runtime failure, 2 input parse, 3 contract violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::ParseBinary { .. } | Error::Json(_) | Error::Config(_) | Error::DimensionMismatch(_) => 2,
            Error::InvalidModel(_)
            | Error::InvalidControl(_)
            | Error::InvalidBudget(_)
            | Error::InvalidSigma(_)
            | Error::InvalidConfig(_)
            | Error::InvalidParams(_)
            | Error::Contract(_)
            | Error::AsymmetricCovariance(_)
            | Error::OutOfBounds { .. }
            | Error::SiteOutOfMap(_)
            | Error::NodataSite(_) => 3,
            _ => 1,
        }
    }
}
