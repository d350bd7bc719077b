use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point depth {depth} is below the camera minimum depth {min_depth}")]
    DepthTooSmall { depth: f64, min_depth: f64 },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("peak-similarity denominator vanishes for point {index}")]
    DegenerateDenominator { index: usize },

    #[error("too few observations: need at least {needed}, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("observation ordering is ambiguous at cluster {cluster} ({neighbors} neighbors)")]
    AmbiguousOrdering { cluster: usize, neighbors: usize },

    #[error("ground-truth curve passes behind the camera (z = {depth})")]
    CurveBehindCamera { depth: f64 },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("cannot differentiate a degree-0 spline")]
    DegreeZero,

    #[error("invalid interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },

    #[error("invalid spline configuration: {0}")]
    InvalidSpline(String),

    #[error("problem too large for active-set enumeration ({rows} rows, limit {limit})")]
    TooLarge { rows: usize, limit: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("consecutive observations {index} and {next} coincide")]
    DuplicateObservations { index: usize, next: usize },

    #[error("reconstruction infeasible after {retries} depth-bound widenings")]
    InfeasibleAfterRetries { retries: usize },

    #[error("spline speed vanishes at s = {s}")]
    DegenerateVelocity { s: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DepthTooSmall { .. } => "depth_too_small",
            Error::InvalidCamera(_) => "invalid_camera",
            Error::DegenerateDenominator { .. } => "degenerate_denominator",
            Error::TooFewObservations { .. } => "too_few_observations",
            Error::AmbiguousOrdering { .. } => "ambiguous_ordering",
            Error::CurveBehindCamera { .. } => "curve_behind_camera",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::DegreeZero => "degree_zero",
            Error::InvalidInterval { .. } => "invalid_interval",
            Error::InvalidSpline(_) => "invalid_spline",
            Error::TooLarge { .. } => "too_large",
            Error::NumericalFailure(_) => "numerical_failure",
            Error::DuplicateObservations { .. } => "duplicate_observations",
            Error::InfeasibleAfterRetries { .. } => "infeasible_after_retries",
            Error::DegenerateVelocity { .. } => "degenerate_velocity",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Parse(_) => "parse_error",
            Error::Io(_) => "io_error",
        }
    }

    /// Whether the error stems from bad input rather than the pipeline.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::Io(_)
                | Error::InvalidCamera(_)
                | Error::InvalidParameter(_)
                | Error::InvalidSpline(_)
                | Error::InvalidInterval { .. }
                | Error::DepthTooSmall { .. }
                | Error::CurveBehindCamera { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
