//! Error types shared by every module, with the CLI exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point-set densities are distributional and cannot be evaluated pointwise")]
    PointSetNotEvaluable,

    #[error("grid cell size {cell_size} exceeds half the resolution length {resolution_length}")]
    GridTooCoarse { cell_size: f64, resolution_length: f64 },

    #[error("grid does not cover the distribution support plus the required margin: {0}")]
    SupportNotCovered(String),

    #[error("self-energy of a point-like mass distribution diverges")]
    SingularSelfEnergy,

    #[error("coincident points between the two sets make the pair energy singular")]
    CoincidentPoints,

    #[error("no closed form for this geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    #[error("cell-pair count {pairs} exceeds the direct-sum budget {budget}")]
    ResourceLimit { pairs: u128, budget: u128 },

    #[error("field sample at radius {radius} lies outside the ball of radius {ball_radius}")]
    SampleOutsideBall { radius: f64, ball_radius: f64 },

    #[error("outside the validity domain: {0}")]
    ValidityDomain(String),

    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),

    #[error("density must be strictly positive, got {0}")]
    NonPositiveDensity(f64),

    #[error("timestep {dt} too coarse, need dt <= {max_dt}")]
    TimestepTooCoarse { dt: f64, max_dt: f64 },

    #[error("grid under-resolved: {0}")]
    GridUnderResolved(String),

    #[error("config error: {0}")]
    ConfigParse(String),

    #[error("unknown density reference '{0}'")]
    UnknownDensityRef(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code contract: 0 success, 2 config error, 3 numerical error, 4 io error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse(_) | Error::UnknownDensityRef(_) | Error::InvalidParameter(_) => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}
