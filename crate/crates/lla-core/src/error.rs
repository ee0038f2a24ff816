use core::fmt;

/// Errors shared across the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand dimensions do not line up.
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
        what: &'static str,
    },
    /// An operation that requires a square matrix got a rectangular one.
    NotSquare { rows: usize, cols: usize },
    /// Bandwidth must be strictly positive.
    InvalidBandwidth(f64),
    /// A per-row ridge value was negative.
    InvalidLambda { row: usize, value: f64 },
    /// Configuration field out of range.
    InvalidConfig(&'static str),
    /// Dense factorization hit a non-positive pivot for the given query row.
    SingularSystem { row: usize },
    /// The LLA denominator |delta_i| fell below the hard floor.
    DegenerateDenominator { row: usize, delta: f64 },
    /// Conjugate gradient observed non-positive curvature on a row.
    CgBreakdown { row: usize },
    /// Statistics passed to a solver were built for a different problem.
    InconsistentStats(&'static str),
    /// Unknown function tag for synthetic regression data.
    UnknownTarget,
    /// Segment/sequence bookkeeping violated (sizes, counts, ranges).
    InvalidTask(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch {
                expected,
                got,
                what,
            } => write!(
                f,
                "shape mismatch in {what}: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::NotSquare { rows, cols } => {
                write!(f, "square matrix required, got {rows}x{cols}")
            }
            Error::InvalidBandwidth(h) => write!(f, "bandwidth must be > 0, got {h}"),
            Error::InvalidLambda { row, value } => {
                write!(f, "ridge must be >= 0, got {value} at row {row}")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::SingularSystem { row } => {
                write!(f, "per-query system is singular at row {row}")
            }
            Error::DegenerateDenominator { row, delta } => {
                write!(f, "denominator {delta} below floor at row {row}")
            }
            Error::CgBreakdown { row } => {
                write!(f, "CG curvature non-positive at row {row} (lambda too small?)")
            }
            Error::InconsistentStats(msg) => write!(f, "inconsistent statistics: {msg}"),
            Error::UnknownTarget => write!(f, "unknown regression target tag"),
            Error::InvalidTask(msg) => write!(f, "invalid task: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
