use thiserror::Error;

/// One violated invariant found while validating a problem.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("{field}: dimension mismatch ({detail})")]
    DimensionMismatch { field: String, detail: String },
    #[error("{field}: not positive definite (smallest eigenvalue {min_eig:e})")]
    NotPositiveDefinite { field: String, min_eig: f64 },
    #[error("{field}: not positive semidefinite (smallest eigenvalue {min_eig:e})")]
    NotPositiveSemidefinite { field: String, min_eig: f64 },
    #[error("{field}: must be nonnegative/positive, got {value}")]
    NegativeParameter { field: String, value: f64 },
    #[error("{field}: non-finite entry")]
    NonFinite { field: String },
    #[error("{field}: not symmetric (asymmetry {asym:e})")]
    NotSymmetric { field: String, asym: f64 },
    #[error("{field}: {detail}")]
    InvalidOption { field: String, detail: String },
}

impl Violation {
    pub fn field(&self) -> &str {
        match self {
            Violation::DimensionMismatch { field, .. }
            | Violation::NotPositiveDefinite { field, .. }
            | Violation::NotPositiveSemidefinite { field, .. }
            | Violation::NegativeParameter { field, .. }
            | Violation::NonFinite { field }
            | Violation::NotSymmetric { field, .. }
            | Violation::InvalidOption { field, .. } => field,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },
    #[error("invalid problem: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(String),
    #[error("unsupported structure: {0}")]
    UnsupportedStructure(String),
    #[error("equation has no unique solution: {0}")]
    NoUniqueSolution(String),
    #[error("pair (A, B) is not stabilizable: {0}")]
    NotStabilizable(String),
    #[error("closed loop is not Hurwitz (spectral abscissa {0:e})")]
    NotHurwitz(f64),
    #[error("integration step too large: dt = {dt:e}, limit {limit:e}")]
    StepTooLarge { dt: f64, limit: f64 },
    #[error("convex program is infeasible: {0}")]
    Infeasible(String),
    #[error("no stabilizing gain found: {0}")]
    Unstabilizable(String),
    #[error("parameter too small: {0}")]
    ParameterTooSmall(String),
    #[error("heuristic failed: {0}")]
    HeuristicFailure(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
