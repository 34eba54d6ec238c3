use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown coefficient family `{0}`")]
    UnknownFamily(String),

    #[error("positivity margin violated: a_bg + min(0, a_rod) - |gamma0| = {margin} <= 0")]
    PositivityMargin { margin: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("coefficient field failed verification: {0}")]
    FieldVerification(String),

    #[error("grid resolution {n} is below the minimum {min}")]
    GridTooSmall { n: usize, min: usize },

    #[error("domain mask has no interior node (shape {shape}, L = {scale}, n = {n})")]
    EmptyDomain { shape: String, scale: f64, n: usize },

    #[error("matrix is not Hermitian: max |M - M^H| = {residual:e}")]
    NotHermitian { residual: f64 },

    #[error("dimension {dim} exceeds the dense guard {max}")]
    DimensionGuard { dim: usize, max: usize },

    #[error("shifted matrix is numerically singular at shift {shift} (pivot {pivot:e} at row {row})")]
    SingularShift { shift: f64, pivot: f64, row: usize },

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("linear solve residual {residual:e} exceeds {tol:e}")]
    SolveResidual { residual: f64, tol: f64 },

    #[error("no spectral gap above band {n_filled}: bands overlap by {overlap:e}")]
    NoGap { n_filled: usize, overlap: f64 },

    #[error("vanishing link determinant |det| = {det:e} at k-index ({i}, {j}); refine the k-grid")]
    CoarseLinks { det: f64, i: usize, j: usize },

    #[error("mollifier margin {0} outside (0, 0.5)")]
    MarginOutOfRange(f64),

    #[error("almost-analytic order {order} needs derivative {needed}, only {available} available")]
    OrderTooHigh {
        order: usize,
        needed: usize,
        available: usize,
    },

    #[error("observable expectation has imaginary residue {residue:e} (bound {bound:e})")]
    ImaginaryResidue { residue: f64, bound: f64 },

    #[error("eigenvalue must be positive, got {0}")]
    NonPositiveEigenvalue(f64),

    #[error("decay fit needs at least {min} distance shells, found {found}")]
    TooFewShells { found: usize, min: usize },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// True for failures of the numerics (no gap, solver breakdown) as
    /// opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularShift { .. }
                | Error::NoConvergence(_)
                | Error::SolveResidual { .. }
                | Error::NoGap { .. }
                | Error::CoarseLinks { .. }
                | Error::ImaginaryResidue { .. }
                | Error::TooFewShells { .. }
        )
    }
}
