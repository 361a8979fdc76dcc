use thiserror::Error;

/// Every failure the library can report.
///
/// Each variant maps to a stable machine-readable code (see [`Error::code`])
/// which the command-line front end prints verbatim.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("eroding the window by {range} leaves an empty domain")]
    EmptyErosion { range: f64 },
    #[error("point ({x}, {y}) lies outside the window")]
    OutOfWindow { x: f64, y: f64 },
    #[error("duplicate point at ({x}, {y})")]
    DuplicatePoint { x: f64, y: f64 },
    #[error("point ({x}, {y}) lies outside the raster extent")]
    OutOfExtent { x: f64, y: f64 },
    #[error("interaction model needs a point pattern")]
    MissingPattern,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("design matrix is rank deficient")]
    Singular,
    #[error("solver did not converge within {iterations} iterations")]
    Diverged { iterations: usize },
    #[error("no penalized coefficients")]
    NoPenalizedCoefficients,
    #[error("pilot estimate is exactly zero for coefficient {0}")]
    ZeroPilot(usize),
    #[error("invalid penalty plan: {0}")]
    InvalidPenalty(String),
    #[error("trend is unbounded on the window")]
    Unbounded,
    #[error("interaction parameter psi = {psi} > 0 is not locally stable")]
    UnstableModel { psi: f64 },
    #[error("tau must be positive for cERIC")]
    ZeroTau,
    #[error("active-set Hessian is singular")]
    SingularActiveHessian,
    #[error("no converged path point to select from")]
    NoConvergedPoint,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidWindow(_) => "E_WINDOW",
            Error::EmptyErosion { .. } => "E_EMPTY_EROSION",
            Error::OutOfWindow { .. } => "E_OUT_OF_WINDOW",
            Error::DuplicatePoint { .. } => "E_DUPLICATE_POINT",
            Error::OutOfExtent { .. } => "E_OUT_OF_EXTENT",
            Error::MissingPattern => "E_MISSING_PATTERN",
            Error::InvalidModel(_) => "E_MODEL",
            Error::InvalidRaster(_) => "E_RASTER",
            Error::NonFinite(_) => "E_NON_FINITE",
            Error::Singular => "E_SINGULAR",
            Error::Diverged { .. } => "E_DIVERGED",
            Error::NoPenalizedCoefficients => "E_NO_PENALIZED",
            Error::ZeroPilot(_) => "E_ZERO_PILOT",
            Error::InvalidPenalty(_) => "E_PENALTY",
            Error::Unbounded => "E_UNBOUNDED",
            Error::UnstableModel { .. } => "E_UNSTABLE_MODEL",
            Error::ZeroTau => "E_ZERO_TAU",
            Error::SingularActiveHessian => "E_SINGULAR_ACTIVE_HESSIAN",
            Error::NoConvergedPoint => "E_NO_CONVERGED_POINT",
            Error::Dimension { .. } => "E_DIMENSION",
            Error::Config(_) => "E_CONFIG",
            Error::Parse(_) => "E_PARSE",
            Error::Io(_) => "E_IO",
        }
    }

    /// I/O and format problems, as opposed to modelling or numerical failures.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Parse(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
