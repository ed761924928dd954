use thiserror::Error;

/// Errors raised by every module of the crate.
///
/// Each variant maps to a stable machine-readable code (see [`Error::code`])
/// which the CLI prints in its structured stderr output.
#[derive(Debug, Error)]
pub enum Error {
    #[error("element is not hyperbolic: {0}")]
    NotHyperbolic(String),

    #[error("({p},{q},{r}) is not a hyperbolic triangle: 1/p + 1/q + 1/r >= 1")]
    NotHyperbolicTriangle { p: u32, q: u32, r: u32 },

    #[error("triangle-group relations failed verification (residual {residual:e})")]
    RelationCheckFailed { residual: f64 },

    #[error("quadrature did not converge: {0}")]
    NonConvergence(String),

    #[error("non-integer multiplicity {value} (deviation {deviation:e} > tol {tol:e}) at rate {rate}")]
    NonIntegerMultiplicity {
        value: f64,
        deviation: f64,
        tol: f64,
        rate: f64,
    },

    #[error("bisection failure: {0}")]
    BisectionFailure(String),

    #[error("recovered area is not positive: {0}")]
    AreaNotPositive(String),

    #[error("grid too short: {0}")]
    GridTooShort(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("no hyperbolic generator in the presentation")]
    NoHyperbolicGenerator,

    #[error("off-diagonal entry vanishes: {0}")]
    OffDiagonalVanishes(String),

    #[error("inconsistent conjugation ratios: {0}")]
    InconsistentRatios(String),

    #[error("Dirichlet polygon not certified: {0}")]
    NotCertified(String),

    #[error("fundamental domain is unbounded: {0}")]
    Unbounded(String),

    #[error("side pairings do not verifiably generate the group: {0}")]
    GenerationUnverified(String),

    #[error("trace bound violated: {0}")]
    BoundViolated(String),

    #[error("data integrity: {0}")]
    DataIntegrity(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Stable code used in CLI error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotHyperbolic(_) => "NotHyperbolic",
            Error::NotHyperbolicTriangle { .. } => "NotHyperbolicTriangle",
            Error::RelationCheckFailed { .. } => "RelationCheckFailed",
            Error::NonConvergence(_) => "NonConvergence",
            Error::NonIntegerMultiplicity { .. } => "NonIntegerMultiplicity",
            Error::BisectionFailure(_) => "BisectionFailure",
            Error::AreaNotPositive(_) => "AreaNotPositive",
            Error::GridTooShort(_) => "GridTooShort",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::NoHyperbolicGenerator => "NoHyperbolicGenerator",
            Error::OffDiagonalVanishes(_) => "OffDiagonalVanishes",
            Error::InconsistentRatios(_) => "InconsistentRatios",
            Error::NotCertified(_) => "NotCertified",
            Error::Unbounded(_) => "Unbounded",
            Error::GenerationUnverified(_) => "GenerationUnverified",
            Error::BoundViolated(_) => "BoundViolated",
            Error::DataIntegrity(_) => "DataIntegrity",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io(_) => "Io",
            Error::Parse(_) => "Parse",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
