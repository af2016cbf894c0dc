//! Crate-wide error type and process exit-code mapping.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("all input points are collinear; a triangulation needs at least 3 non-collinear points")]
    CollinearInput,

    #[error("spots {a:?} and {b:?} share identical coordinates ({x}, {y})")]
    DuplicatePoint { a: String, b: String, x: f64, y: f64 },

    #[error("spot id {id:?} appears more than once")]
    DuplicateSpotId { id: String },

    #[error("spot {id:?} has a non-finite coordinate")]
    NonFiniteCoordinate { id: String },

    #[error("triangle {index} is degenerate (area {area:.3e} below threshold)")]
    DegenerateTriangle { index: usize, area: f64 },

    #[error("mass matrix factorization failed; mesh may contain degenerate elements")]
    SingularMass,

    #[error("gene {gene:?} has a non-finite response value at spot index {spot}")]
    NonFiniteResponse { gene: String, spot: usize },

    #[error("penalized system is numerically singular (lambda = {lambda:.3e})")]
    SingularSystem { lambda: f64 },

    #[error("fit is saturated: n = {n}, edf = {edf:.3} leaves no residual degrees of freedom")]
    SaturatedFit { n: usize, edf: f64 },

    #[error("label vectors have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("clusters {a} and {b} have identical centroids; Davies-Bouldin index is undefined")]
    IdenticalCentroids { a: usize, b: usize },

    #[error("metric requires at least 2 clusters, found {found}")]
    SingleCluster { found: usize },

    #[error("cannot keep {requested} spots; at least 3 are required")]
    TooFewSpots { requested: usize },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("counts file references spot {spot_id:?} which is absent from the coordinates file")]
    UnknownSpot { spot_id: String },

    #[error("coordinates file lists spot {spot_id:?} which is absent from the counts file")]
    MissingSpot { spot_id: String },

    #[error("no genes remain after filtering zero-expression rows")]
    EmptyAfterFilter,

    #[error("negative value {value} at gene {gene:?}, spot index {spot}; log1p requires nonnegative input")]
    NegativeValue { gene: String, spot: usize, value: f64 },

    #[error("clustering input is degenerate: {reason}")]
    DegenerateInput { reason: String },

    #[error("gene {gene:?} failed to fit: {source}")]
    GeneFit { gene: String, source: Box<Error> },

    #[error("no lambda on the grid produced a valid fit for every gene")]
    NoEligibleLambda,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    /// Process exit code: 2 for input errors, 3 for numerical failures,
    /// 4 for internal limits.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::CollinearInput
            | Error::DuplicatePoint { .. }
            | Error::DuplicateSpotId { .. }
            | Error::NonFiniteCoordinate { .. }
            | Error::NonFiniteResponse { .. }
            | Error::LengthMismatch { .. }
            | Error::TooFewSpots { .. }
            | Error::Parse { .. }
            | Error::UnknownSpot { .. }
            | Error::MissingSpot { .. }
            | Error::EmptyAfterFilter
            | Error::NegativeValue { .. }
            | Error::InvalidConfig(_)
            | Error::Io { .. } => 2,
            Error::DegenerateTriangle { .. }
            | Error::SingularMass
            | Error::SingularSystem { .. }
            | Error::SaturatedFit { .. }
            | Error::IdenticalCentroids { .. }
            | Error::SingleCluster { .. }
            | Error::DegenerateInput { .. } => 3,
            Error::NoEligibleLambda => 4,
            Error::GeneFit { source, .. } => source.exit_code(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
