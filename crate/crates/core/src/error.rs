//! Error type shared by every stage of the pipeline.

use thiserror::Error;

/// Failure modes of the waveguide pipeline.
///
/// The variants are grouped into three families (configuration, assumption
/// checks and numerical solver failures) so that front ends can map them to
/// distinct exit codes via [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("obstacle touches the cell boundary: {0}")]
    ObstacleTouchesBoundary(String),

    #[error("unmeshable geometry: {0}")]
    Unmeshable(String),

    #[error("geometry is not mirror-symmetric: {0}")]
    NotSymmetric(String),

    #[error("refractive index is not positive at ({x1:.6}, {x2:.6}): n = {value}")]
    NonPositiveIndex { x1: f64, x2: f64, value: f64 },

    #[error("weighted mass matrix is not positive definite at eps = {eps}")]
    MassNotPositive { eps: f64 },

    #[error("no degeneracy at p = 0 within tolerance (smallest relative gap {gap:.3e})")]
    NoDegeneracy { gap: f64 },

    #[error("flux form is not diagonalizable at the Dirac point (slope {alpha:.3e})")]
    ZeroSlope { alpha: f64 },

    #[error("no fold crossing: band {band} never returns to the Dirac energy on (0, pi)")]
    NoFoldCrossing { band: usize },

    #[error("perturbation does not couple the Dirac pair: |t*| = {0:.3e}")]
    ZeroCoupling(f64),

    #[error("band separation violated: {0}")]
    SeparationViolated(String),

    #[error("degenerate eigenvalue: {0}")]
    Degenerate(String),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("Newton iteration failed: {0}")]
    Newton(String),

    #[error("complex root left the continuation disc: {0}")]
    RootEscaped(String),

    #[error("branch tracking failed: {0}")]
    BranchTracking(String),

    #[error("characteristic-value count is {count}, expected 1")]
    MomentCount { count: i64 },

    #[error("refinement stagnated: {0}")]
    Stagnation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Assumption,
    Solver,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_)
            | Error::ObstacleTouchesBoundary(_)
            | Error::Unmeshable(_)
            | Error::NotSymmetric(_)
            | Error::NonPositiveIndex { .. }
            | Error::Io(_) => ErrorKind::Config,
            Error::NoDegeneracy { .. }
            | Error::ZeroSlope { .. }
            | Error::NoFoldCrossing { .. }
            | Error::ZeroCoupling(_)
            | Error::SeparationViolated(_) => ErrorKind::Assumption,
            Error::MassNotPositive { .. }
            | Error::Degenerate(_)
            | Error::Eigensolver(_)
            | Error::Singular(_)
            | Error::Newton(_)
            | Error::RootEscaped(_)
            | Error::BranchTracking(_)
            | Error::MomentCount { .. }
            | Error::Stagnation(_) => ErrorKind::Solver,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
