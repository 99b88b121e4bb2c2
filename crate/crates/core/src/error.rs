use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty mask: region box does not intersect the grid")]
    EmptyMask,

    #[error("singular or ill-conditioned system (condition estimate {condition:.3e}): {context}")]
    Singular { condition: f64, context: String },

    #[error("no convergence after {iterations} iterations: {context}")]
    NoConvergence { iterations: usize, context: String },

    #[error("matrix has eigenvalue {re:.6e}{im:+.6e}i on the closed negative real axis; raise the ridge or project to leading EOFs")]
    BranchCut { re: f64, im: f64 },

    #[error("Lyapunov operator not uniquely solvable: eigenvalues {0:.3e} and {1:.3e} sum to ~0")]
    NotSolvable(f64, f64),

    #[error("matrix is strongly indefinite (most negative eigenvalue {min_eig:.3e}, scale {scale:.3e}){hint}")]
    Indefinite {
        min_eig: f64,
        scale: f64,
        hint: &'static str,
    },

    #[error("factor rank {rank} exceeds the maximum {max_rank} after compression; use a larger compression tolerance")]
    RankExceeded { rank: usize, max_rank: usize },

    #[error("series too short: {0}")]
    SeriesTooShort(String),

    #[error("unstable drift: spectral abscissa bound {0:.3e} >= 0; increase the damping")]
    Unstable(f64),

    #[error("time grids misaligned: simulation time {sim:.6} has no reference sample within {tol:.6} days")]
    TimeMisaligned { sim: f64, tol: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported version {0}")]
    UnsupportedVersion(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    /// True for failures of the numerical kernels (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::NoConvergence { .. }
                | Error::BranchCut { .. }
                | Error::NotSolvable(..)
                | Error::Indefinite { .. }
                | Error::RankExceeded { .. }
                | Error::Unstable(_)
        )
    }
}
