use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("direction vector is not unit norm (norm = {0})")]
    NonUnitDirection(f64),

    #[error("RIS back-illuminated: {0}")]
    BackIlluminated(String),

    #[error("azimuth derivative singular: {0}")]
    AzimuthSingular(String),

    #[error("noise variance must be positive")]
    ZeroNoise,

    #[error("unidentifiable channel parameterization")]
    UnidentifiableChannel,

    #[error("state unidentifiable for this geometry")]
    UnidentifiableState,

    #[error("singular matrix (relative pivot {pivot:e} below tolerance {tol:e})")]
    Singular { pivot: f64, tol: f64 },

    #[error("observation is identically zero")]
    ZeroObservation,

    #[error("spatial frequency unidentifiable: cost surface is flat")]
    FlatSpatialCost,

    #[error("inconsistent TOAs / d_th too small: {0}")]
    NoCandidates(String),

    #[error("underdetermined: {0}")]
    Underdetermined(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
