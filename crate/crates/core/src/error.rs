use core::fmt;

/// Errors raised by geometry, estimation and inference routines.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Two objects that must share a geometry kind or dimension do not.
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    GeometryMismatch,
    NonFinite,
    NotSymmetric {
        asymmetry: f64,
    },
    NotPositiveDefinite {
        min_eigenvalue: f64,
    },
    /// An exponential step left the SPD cone; callers shrink the step.
    ConeViolation,
    EmptySample,
    /// The location coincides with an observation (distance below the guard).
    Coincident,
    /// Balance denominator vanished for an observation.
    DegenerateObservation,
    /// Every observation was degenerate for the balance function.
    AllDegenerate,
    SingularMatrix {
        condition: f64,
    },
    InvalidScale(f64),
    InvalidEpsilon(f64),
    /// A radial median scale is zero: at least half the data sit on the marginal median.
    CalibrationDegenerate {
        factor: Factor,
    },
    InvalidArgument(&'static str),
}

/// Which factor of the product an error or quantity refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factor {
    M,
    N,
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::M => f.write_str("M"),
            Factor::N => f.write_str("N"),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::GeometryMismatch => f.write_str("factor geometries do not match"),
            Error::NonFinite => f.write_str("non-finite value"),
            Error::NotSymmetric { asymmetry } => {
                write!(f, "matrix is not symmetric (max asymmetry {asymmetry:e})")
            }
            Error::NotPositiveDefinite { min_eigenvalue } => {
                write!(f, "matrix is not positive definite (min eigenvalue {min_eigenvalue:e})")
            }
            Error::ConeViolation => f.write_str("exponential step left the SPD cone"),
            Error::EmptySample => f.write_str("sample is empty"),
            Error::Coincident => f.write_str("location coincides with an observation"),
            Error::DegenerateObservation => f.write_str("balance denominator is zero"),
            Error::AllDegenerate => f.write_str("every observation is degenerate"),
            Error::SingularMatrix { condition } => {
                write!(f, "matrix is singular (condition number {condition:e})")
            }
            Error::InvalidScale(a) => write!(f, "scale {a} is outside (0, 2)"),
            Error::InvalidEpsilon(e) => write!(f, "truncation width {e} is outside (0, 1)"),
            Error::CalibrationDegenerate { factor } => {
                write!(f, "radial median scale of factor {factor} is zero")
            }
            Error::InvalidArgument(msg) => f.write_str(msg),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
